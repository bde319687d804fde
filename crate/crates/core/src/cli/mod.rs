//! The `duio` command line.
//!
//! Exit codes: 0 success, 1 parse or I/O error, 2 failed assumption,
//! 3 observer synthesis failure.

pub mod file;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::numerics;
use crate::scenario::{self, Assessment, Scenario, ScenarioError, Violation};
use file::{FileError, ScenarioFile};

#[derive(Debug, Parser)]
#[command(
    name = "duio",
    version,
    about = "Distributed unknown input observer simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check connectivity, joint reconstructability and observer invariants.
    Validate { file: PathBuf },
    /// Synthesize P and L for every node and print the completed scenario.
    Design {
        file: PathBuf,
        /// Write the scenario here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate and write the per-step error CSV.
    Run(RunArgs),
    /// Steady-state errors for several iteration counts and modes.
    Compare {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,50,60,200")]
        nu_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "plain,normalized")]
        modes: Vec<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Plain,
    Normalized,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub file: PathBuf,
    #[arg(long)]
    pub nu: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Use the Cholesky change of variables.
    #[arg(long, conflicts_with = "plain")]
    pub normalize: bool,
    /// Iterate on the original T_i.
    #[arg(long)]
    pub plain: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also report the averaged error against its bound.
    #[arg(long)]
    pub bound: bool,
    /// Seed each step's iteration with the previous estimate.
    #[arg(long)]
    pub warm_start: bool,
}

#[derive(Debug)]
enum Failure {
    Parse(String),
    Assumption(String),
    Synthesis(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 1,
            Failure::Assumption(_) => 2,
            Failure::Synthesis(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Assumption(m) | Failure::Synthesis(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Synthesis { .. } => Failure::Synthesis(e.to_string()),
            ScenarioError::ValidationFailed(ref v) => Failure::Assumption(describe_violations(v)),
            _ => Failure::Parse(e.to_string()),
        }
    }
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        match e {
            FileError::Scenario(inner) => inner.into(),
            other => Failure::Parse(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Parse(e.to_string())
    }
}

fn describe_violations(v: &[Violation]) -> String {
    let mut s = String::new();
    for (k, violation) in v.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        s.push_str(&violation.to_string());
        if let Violation::NotJointlyReconstructable { kernel, .. } = violation {
            s.push_str("\nunobservable directions (columns):\n");
            s.push_str(&format_matrix(kernel));
        }
    }
    s
}

fn format_matrix(m: &numerics::Matrix) -> String {
    m.row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:>10.6}")).collect();
            format!("  [{}]", cells.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn load(path: &Path) -> Result<(ScenarioFile, Scenario), Failure> {
    let f = ScenarioFile::load(path)?;
    let sc = f.to_scenario()?;
    Ok((f, sc))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            Failure::Parse(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn print_assessment(a: &Assessment) {
    println!(
        "graph connectivity: {} ({} component{})",
        pass(a.components == 1),
        a.components,
        if a.components == 1 { "" } else { "s" }
    );
    let r = &a.reconstructability;
    println!(
        "joint reconstructability: {} (rank {} of {})",
        pass(r.holds()),
        r.rank,
        r.state_dim
    );
    for (i, (d, res)) in a.designs.iter().zip(&a.residuals).enumerate() {
        let failed = a
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DesignInvariant { node, .. } if *node == i + 1));
        let origin = match &a.reports[i] {
            Some(rep) => format!(
                "synthesized, dim W* = {}, dim W_g = {}",
                rep.infimal_dim, rep.enlarged_dim
            ),
            None => "supplied".to_string(),
        };
        println!(
            "node {} observer: {} (q = {}, {origin}; |P Bbar| = {:.3e}, invariance = {:.3e}, rho(Abar) = {:.6})",
            i + 1,
            pass(!failed),
            d.quotient_dim(),
            res.decoupling,
            res.invariance,
            res.spectral_radius
        );
    }
    if let Some(c) = &a.constants {
        println!("mu = {:.6}", c.mu);
        println!("lambda2 = {:.6}", c.lambda2);
        for (i, (k, alpha)) in c.lipschitz.iter().zip(&c.alphas).enumerate() {
            println!("node {}: K = {k:.6}, alpha = {alpha:.6}", i + 1);
        }
    }
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let (_, sc) = load(path)?;
    let a = scenario::assess(&sc)?;
    print_assessment(&a);
    if a.passed() {
        Ok(())
    } else {
        Err(Failure::Assumption(describe_violations(&a.violations)))
    }
}

fn cmd_design(path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let (f, sc) = load(path)?;
    let a = scenario::prepare(&sc)?;
    let mut w = sink(out)?;
    w.write_all(f.with_designs(&a.designs).to_json().as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let (_, mut sc) = load(&args.file)?;
    let fusion = &mut sc.sim.fusion;
    if let Some(nu) = args.nu {
        fusion.nu = nu;
    }
    if let Some(g) = args.gamma {
        fusion.gamma = g;
    }
    if args.normalize {
        fusion.normalize = true;
    }
    if args.plain {
        fusion.normalize = false;
    }
    if args.warm_start {
        fusion.warm_start = true;
    }
    if let Some(steps) = args.steps {
        sc.sim.steps = steps;
    }
    fusion
        .validate()
        .map_err(|e| Failure::Parse(e.to_string()))?;
    let started = Instant::now();
    let record = scenario::run_algorithm1(&sc)?;
    let elapsed = started.elapsed();
    record
        .write_csv(sink(args.out.as_deref())?)
        .map_err(|e| Failure::Parse(e.to_string()))?;
    // Keep stdout clean for CSV when no file was given.
    let mut report: Box<dyn Write> = if args.out.is_some() {
        Box::new(io::stdout().lock())
    } else {
        Box::new(io::stderr().lock())
    };
    let f = &sc.sim.fusion;
    writeln!(
        report,
        "steps = {}, nu = {}, gamma = {}, mode = {}{}",
        sc.sim.steps,
        f.nu,
        f.gamma,
        if f.normalize { "normalized" } else { "plain" },
        if f.warm_start { ", warm start" } else { "" }
    )?;
    let steady = record.steady_state_errors();
    let avg = record.steady_state_avg_errors();
    for (i, e) in steady.iter().enumerate() {
        if args.bound {
            writeln!(
                report,
                "node {}: steady-state error {e:.3e}, averaged {:.3e}",
                i + 1,
                avg[i]
            )?;
        } else {
            writeln!(report, "node {}: steady-state error {e:.3e}", i + 1)?;
        }
    }
    if args.bound {
        writeln!(
            report,
            "steady-state bound on averaged error: {:.3e}",
            record.steady_state_bound()
        )?;
    }
    writeln!(report, "wall time: {:.3} s", elapsed.as_secs_f64())?;
    Ok(())
}

fn cmd_compare(
    path: &Path,
    nu_list: &[usize],
    modes: &[Mode],
    out: Option<&Path>,
) -> Result<(), Failure> {
    let (_, sc) = load(path)?;
    if nu_list.contains(&0) {
        return Err(Failure::Parse("nu values must be at least 1".into()));
    }
    let flags: Vec<bool> = modes.iter().map(|m| *m == Mode::Normalized).collect();
    let rows = scenario::compare_modes(&sc, nu_list, &flags)?;
    scenario::write_comparison_csv(&rows, sink(out)?).map_err(|e| Failure::Parse(e.to_string()))?;
    Ok(())
}

pub fn run(cli: &Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Validate { file } => cmd_validate(file),
        Command::Design { file, out } => cmd_design(file, out.as_deref()),
        Command::Run(args) => cmd_run(args),
        Command::Compare {
            file,
            nu_list,
            modes,
            out,
        } => cmd_compare(file, nu_list, modes, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    run(&cli)
}
