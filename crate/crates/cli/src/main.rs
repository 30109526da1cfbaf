use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use twoweight::counterexample::divergence_report;
use twoweight::instance::{generate_random_instance, GeneratorSpec, Instance};
use twoweight::normest::{norm_lower_bound, NormConfig, OperatorHandle};
use twoweight::paraproduct::{AlphaSequence, Symbol};
use twoweight::stopping::{carleson_constant, carleson_embedding_check, normalize_mirror_inputs, proof_mirror, stopping_forest, AtomSet};
use twoweight::suite::{run_criterion, SuiteConfig, CRITERIA};
use twoweight::testing::{adjoint_testing, direct_testing};
use twoweight::{AtomId, LeafFunction};

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "twoweight", version, about = "Two-weight paraproduct experiments on finite trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random instance as JSON.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Direct and adjoint testing constants (CSV).
    Testing {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lower bound for an operator norm (JSON).
    Norm {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long, value_enum, default_value_t = Kind::Vector)]
        kind: Kind,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long, default_value_t = 64)]
        starts: usize,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        /// Relative step tolerance of the ascent.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the two-part estimate of <T_a f, g> (JSON); alpha = |beta|,
    /// f = |instance f|, g = 1, all normalized first.
    Mirror {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cantor counterexample table (CSV).
    Counterexample {
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        #[arg(long, default_value_t = 0.3)]
        r: f64,
        #[arg(long, default_value_t = 10)]
        nmax: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Carleson embedding for the stopping forest of |f| (JSON).
    Embedding {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        p: f64,
        /// Relative slack allowed in lhs <= bound.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance battery; summary CSV.
    Suite {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run a single criterion.
        #[arg(long)]
        criterion: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// pi_b with b the mean-zero projection of beta.
    Paraproduct,
    /// Pi_beta into the sequence space.
    Vector,
    /// The shifted operator built from |beta|^q, on L^p.
    Shifted,
    /// T_alpha with a = |beta|^q / mu(parent).
    Talpha,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    arity: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0.2)]
    sparsity: f64,
}

#[derive(Args)]
struct SourceArgs {
    /// Instance JSON; when absent an instance is generated.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
}

impl GenArgs {
    fn generate(&self) -> CliResult<Instance> {
        let spec = GeneratorSpec {
            arity: self.arity,
            depth: self.depth,
            sparsity: self.sparsity,
        };
        Ok(generate_random_instance(spec, self.seed)?)
    }
}

impl SourceArgs {
    fn load(&self) -> CliResult<(String, Instance)> {
        match &self.instance {
            Some(path) => {
                let inst = Instance::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((id, inst))
            }
            None => Ok((format!("seed-{}", self.gen.seed), self.gen.generate()?)),
        }
    }
}

fn sink(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(File::create(path).map_err(|e| format!("{}: {e}", path.display()))?),
        None => Box::new(io::stdout()),
    })
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> CliResult<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_csv<T: Serialize>(out: &Option<PathBuf>, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink(out)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TestingRow {
    id: String,
    p: f64,
    q: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "Bstar")]
    b_star: Option<f64>,
}

#[derive(Serialize)]
struct NormRow {
    value: f64,
    start_kind: String,
    starts_used: usize,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct CounterexampleRow {
    n: usize,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "Bstar")]
    b_star: f64,
    #[serde(rename = "Q")]
    q: f64,
    #[serde(rename = "L")]
    lower: f64,
    bound: f64,
}

#[derive(Serialize)]
struct EmbeddingRow {
    p: f64,
    carleson_constant: f64,
    lhs: f64,
    bound: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SuiteRow {
    id: usize,
    name: String,
    pass: bool,
    trials: usize,
    checks: usize,
    violations: usize,
    worst: f64,
    detail: String,
}

/// Returns whether every asserted property held.
fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Generate { gen, out } => {
            let inst = gen.generate()?;
            let mut w = sink(&out)?;
            writeln!(w, "{}", inst.to_json_string()?)?;
            Ok(true)
        }
        Command::Testing { src, p, q, out } => {
            let (id, inst) = src.load()?;
            let beta = inst.beta.restricted_to_support(&inst.mu);
            let b = direct_testing(&beta, p, q, &inst.mu, &inst.nu)?;
            let b_star = if p > q {
                Some(adjoint_testing(&beta, p, q, &inst.mu, &inst.nu)?)
            } else {
                None
            };
            write_csv(&out, &[TestingRow { id, p, q, b, b_star }])?;
            Ok(true)
        }
        Command::Norm {
            src,
            kind,
            p,
            q,
            starts,
            max_iter,
            tol,
            out,
        } => {
            let (_, inst) = src.load()?;
            let (mu, nu) = (&inst.mu, &inst.nu);
            let beta = inst.beta.restricted_to_support(mu);
            let op = match kind {
                Kind::Paraproduct => OperatorHandle::paraproduct(Symbol::project(&beta, nu), p, mu, nu)?,
                Kind::Vector => OperatorHandle::vector_paraproduct(beta, p, q, mu, nu)?,
                Kind::Shifted => OperatorHandle::shifted(beta, q, p, mu, nu)?,
                Kind::Talpha => OperatorHandle::t_alpha(AlphaSequence::from_beta(&beta, q, mu), p, mu, nu)?,
            };
            let cfg = NormConfig {
                starts,
                max_iter,
                step_tol: tol,
                seed: src.gen.seed,
            };
            let est = norm_lower_bound(&op, &cfg)?;
            write_json(
                &out,
                &NormRow {
                    value: est.value,
                    start_kind: est.start_kind.to_string(),
                    starts_used: est.starts_used,
                    iterations: est.iterations,
                    converged: est.converged,
                },
            )?;
            Ok(true)
        }
        Command::Mirror { src, p, out } => {
            let (_, inst) = src.load()?;
            let alpha = AlphaSequence::from_edges(inst.lattice, inst.beta.edges().iter().map(|v| v.abs()).collect())?;
            let f = inst.function().abs();
            let g = LeafFunction::constant(&inst.lattice, 1.0);
            let (alpha, f, g) = normalize_mirror_inputs(&alpha, &f, &g, p, &inst.mu, &inst.nu)?;
            let report = proof_mirror(&alpha, &f, &g, p, &inst.mu, &inst.nu)?;
            write_json(&out, &report)?;
            Ok(report.pass)
        }
        Command::Counterexample { p, r, nmax, out } => {
            let rep = divergence_report(nmax, p, r)?;
            let rows: Vec<CounterexampleRow> = rep
                .rows
                .iter()
                .map(|row| CounterexampleRow {
                    n: row.n,
                    b: row.b,
                    b_star: row.b_star,
                    q: row.q,
                    lower: row.lower,
                    bound: row.bound,
                })
                .collect();
            write_csv(&out, &rows)?;
            for c in rep.checks.iter().filter(|c| !c.pass) {
                eprintln!("violated: {} ({} vs {})", c.name, c.lhs, c.rhs);
            }
            Ok(rep.pass)
        }
        Command::Embedding { src, p, tol, out } => {
            let (_, inst) = src.load()?;
            let l = inst.lattice;
            let f = inst.function();
            let roots = AtomSet::from_atoms(l, [AtomId::ROOT])?;
            let weights = stopping_forest(&AtomSet::full(l), &f.abs(), &inst.mu, &roots)?.mass_weights(&inst.mu);
            let (lhs, bound) = carleson_embedding_check(&weights, &f, p, &inst.mu)?;
            let pass = lhs <= bound + tol * bound.abs().max(1.0);
            write_json(
                &out,
                &EmbeddingRow {
                    p,
                    carleson_constant: carleson_constant(&weights, &inst.mu),
                    lhs,
                    bound,
                    pass,
                },
            )?;
            Ok(pass)
        }
        Command::Suite { seed, criterion, out } => {
            let ids: Vec<usize> = match criterion {
                Some(id) => vec![id],
                None => (1..=CRITERIA).collect(),
            };
            let cfg = SuiteConfig { seed };
            let mut rows = Vec::new();
            for id in ids {
                let o = run_criterion(id, &cfg)?;
                eprintln!("{}", o.line());
                rows.push(SuiteRow {
                    id: o.id,
                    name: o.name,
                    pass: o.pass,
                    trials: o.trials,
                    checks: o.checks,
                    violations: o.violations,
                    worst: o.worst,
                    detail: o.detail,
                });
            }
            write_csv(&out, &rows)?;
            Ok(rows.iter().all(|r| r.pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
