mod manifest;
mod source;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lapdiag::calibration::{default_lambda_candidates, find_nu, gamma_rule, lambda_sweep, Interrogation};
use lapdiag::grids::{ckf_grid, cross2d_grid, gh2_grid};
use lapdiag::integrand::StudentT;
use lapdiag::oracles::{importance_log_weights, riemann_integrate, summarize_weights, weight_histogram_csv, L2Problem};
use lapdiag::special::Z95;
use lapdiag::{calibrate, diagnose_with, CalibrationFile, CalibrationOptions, LambdaChoice, PreliminaryGrid, SolveOptions, SolverPath};
use serde::Serialize;

use manifest::{CommandKind, RunManifest};
use source::Source;

const EXIT_ERROR: u8 = 1;
const EXIT_REJECT: u8 = 3;

#[derive(Parser)]
#[command(name = "lapdiag", version, about = "Bayesian-quadrature diagnostic for Laplace approximations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Calibrate (ν, γ, λ, α) for a grid and write a calibration file.
    Calibrate(CalibrateArgs),
    /// Run the diagnostic on one integrand. Exit 0 = accept, 3 = reject.
    Diagnose(DiagnoseArgs),
    /// Tabulate m1, C̃1 and the boundary α over a list of length-scales.
    Sweep(SweepArgs),
    /// Independent integral estimates and error surfaces.
    #[command(subcommand)]
    Oracle(OracleCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Cross2d,
    Ckf,
    Gh2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Auto,
    Dense,
    Fskq,
}

impl From<Solver> for SolverPath {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Auto => SolverPath::Auto,
            Solver::Dense => SolverPath::Dense,
            Solver::Fskq => SolverPath::Fskq,
        }
    }
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long, value_enum)]
    grid: Family,
    /// Generator scale (gh2 only).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

impl GridArgs {
    fn build(&self) -> anyhow::Result<PreliminaryGrid> {
        Ok(match self.grid {
            Family::Cross2d => {
                if self.dim != 2 {
                    bail!("cross2d is only defined for --dim 2");
                }
                cross2d_grid()
            }
            Family::Ckf => ckf_grid(self.dim)?,
            Family::Gh2 => gh2_grid(self.dim, self.scale)?,
        })
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Fix λ instead of optimizing it.
    #[arg(long)]
    lambda: Option<f64>,
    /// Candidate λ values for the m1-target sweep (non-cross2d grids).
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<f64>>,
    /// Box half-width for the L² objective (cross2d).
    #[arg(long, default_value_t = 10.0)]
    halfwidth: f64,
    /// Box step for the L² objective (cross2d).
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    #[arg(long, default_value_t = Z95)]
    z_crit: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// banana | mvt:nu=N,d=D | productt:nu=N,d=D | gaussian:d=D
    #[arg(long)]
    builtin: Option<String>,
    /// JSON spec file for an external evaluator.
    #[arg(long)]
    spec: Option<PathBuf>,
}

impl SourceArgs {
    fn source(&self) -> Source {
        match (&self.builtin, &self.spec) {
            (Some(b), _) => Source::Builtin(b.clone()),
            (None, Some(p)) => Source::Spec(p.clone()),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }

    fn record(&self, m: &mut RunManifest) {
        if let Some(b) = &self.builtin {
            m.input("builtin", b);
        }
        if let Some(p) = &self.spec {
            m.input("spec", p.display());
        }
    }
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Orbit-contribution CSV; defaults to `<out>.orbits.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Solver::Auto)]
    solver: Solver,
    /// Add 1e-12·max diag to the Gram matrix.
    #[arg(long)]
    jitter: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Take grid and γ from a calibration file.
    #[arg(long, conflicts_with_all = ["dim", "grid"])]
    calib: Option<PathBuf>,
    #[arg(long, requires = "grid")]
    dim: Option<usize>,
    #[arg(long, value_enum, requires = "dim")]
    grid: Option<Family>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Override γ.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Integrand to sweep; defaults to the calibration function.
    #[arg(long)]
    builtin: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Importance sampling with a multivariate t proposal.
    Is(IsArgs),
    /// Midpoint box rule (d ≤ 3).
    Quad(QuadArgs),
    /// Difference surface m1ˣ·g − f on a box (d ≤ 2).
    L2Surface(SurfaceArgs),
}

#[derive(Args)]
struct IsArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    df: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a histogram of log weights.
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuadArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 15.0)]
    halfwidth: f64,
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurfaceArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    halfwidth: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long)]
    out: PathBuf,
}

fn read_calibration(path: &Path) -> anyhow::Result<CalibrationFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CalibrationFile::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LG_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("LG_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("LG_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> anyhow::Result<u8> {
    let grid = a.grid.build()?;
    let mut m = RunManifest::new(CommandKind::Calibrate);
    m.input("dim", a.grid.dim);
    m.input("grid", grid.family.as_str());
    m.input("scale", grid.scale);
    let choice = match (a.lambda, &a.candidates, a.grid.grid) {
        (Some(l), _, _) => LambdaChoice::Fixed(l),
        (None, Some(c), _) => LambdaChoice::Target { candidates: c.clone() },
        (None, None, Family::Cross2d) => LambdaChoice::L2 { halfwidth: a.halfwidth, step: a.step },
        (None, None, _) => LambdaChoice::Target { candidates: default_lambda_candidates() },
    };
    let opts = CalibrationOptions { z_crit: a.z_crit, ..Default::default() };
    let result = match calibrate(&grid, &choice, opts) {
        Ok(r) => r,
        Err(lapdiag::Error::AllCandidatesFailed) if matches!(choice, LambdaChoice::Target { .. }) => {
            bail!("every λ candidate failed; rerun `sweep` to inspect the table")
        }
        Err(e) => return Err(e.into()),
    };
    let file = CalibrationFile::from_result(&result);
    m.emit(&a.out, &(file.to_json()? + "\n"))?;
    if let Some(sweep) = &result.sweep {
        let csv = sweep_csv(sweep);
        let path = sibling(&a.out, "sweep.csv");
        m.emit(&path, &csv)?;
    }
    m.finish(&a.out)?;
    println!(
        "nu={} gamma={:.6} lambda={:.6} alpha={:.6} achieved_m1={:.6} rcond={:.4e} method={}",
        file.nu,
        file.gamma,
        file.lambda,
        file.alpha,
        file.achieved_m1,
        file.rcond,
        serde_json::to_value(file.method)?.as_str().unwrap_or("?")
    );
    Ok(0)
}

fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn sweep_csv(rows: &[lapdiag::calibration::SweepRow]) -> String {
    let mut out = String::from("lambda,m1,c1_unit,alpha,rcond,error\n");
    for r in rows {
        let alpha = r.log_alpha.map(|la| format!("{:e}", la.exp())).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace(',', ";");
        out.push_str(&format!("{},{:e},{:e},{alpha},{:e},{err}\n", r.lambda, r.m1, r.c1_unit, r.rcond));
    }
    out
}

fn cmd_diagnose(a: &DiagnoseArgs) -> anyhow::Result<u8> {
    let mut m = RunManifest::new(CommandKind::Diagnose);
    a.source.record(&mut m);
    m.input("calib", a.calib.display());
    let config = read_calibration(&a.calib)?.to_config()?;
    let spec = a.source.source().load()?;
    let opts = SolveOptions { solver: a.solver.into(), jitter: a.jitter };
    let report = diagnose_with(&spec, &config, opts)?;
    m.emit(&a.out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let csv = a.csv.clone().unwrap_or_else(|| sibling(&a.out, "orbits.csv"));
    m.emit(&csv, &report.orbit_csv())?;
    m.finish(&a.out)?;
    let p = &report.posterior;
    println!(
        "decision={} boundary={} m1={:.6e} la={:.6e} c1={:.6e} delta={:.6e} epsilon={:.6e} z={:.6} p={:.6e} n={} solver={}",
        if p.reject { "reject" } else { "accept" },
        p.boundary,
        report.m1,
        report.laplace,
        report.c1,
        p.delta,
        p.epsilon,
        p.z_score,
        p.p_value,
        report.n_points,
        serde_json::to_value(p.solver)?.as_str().unwrap_or("?")
    );
    Ok(if p.reject { EXIT_REJECT } else { 0 })
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<u8> {
    let mut m = RunManifest::new(CommandKind::Sweep);
    let (grid, nu, gamma, z_crit) = match (&a.calib, a.dim, a.grid) {
        (Some(path), _, _) => {
            m.input("calib", path.display());
            let c = read_calibration(path)?;
            let config = c.to_config()?;
            (config.grid, c.nu, c.gamma, c.z_crit)
        }
        (None, Some(dim), Some(grid)) => {
            let g = GridArgs { dim, grid, scale: a.scale }.build()?;
            m.input("dim", dim);
            m.input("grid", g.family.as_str());
            m.input("scale", g.scale);
            let nu = find_nu(dim)?;
            (g, nu, gamma_rule(nu as f64, dim)?, Z95)
        }
        _ => bail!("sweep needs either --calib or both --dim and --grid"),
    };
    let gamma = a.gamma.unwrap_or(gamma);
    m.input("gamma", gamma);
    let spec = match &a.builtin {
        Some(b) => {
            m.input("builtin", b);
            source::builtin(b)?
        }
        None => StudentT::new(nu as f64, grid.dim)?.spec()?,
    };
    let lambdas = a.lambdas.clone().unwrap_or_else(default_lambda_candidates);
    let probe = Interrogation::new(&spec, &grid, gamma)?;
    let rows = lambda_sweep(&probe, &grid, gamma, &lambdas, z_crit, SolveOptions::default());
    m.emit(&a.out, &sweep_csv(&rows))?;
    m.finish(&a.out)?;
    let ok = rows.iter().filter(|r| r.error.is_none()).count();
    println!("rows={} ok={ok} out={}", rows.len(), a.out.display());
    Ok(0)
}

#[derive(Serialize)]
struct QuadOutput {
    integral: f64,
    halfwidth: f64,
    step: f64,
}

fn cmd_oracle(c: &OracleCmd) -> anyhow::Result<u8> {
    let mut m = RunManifest::new(CommandKind::Oracle);
    match c {
        OracleCmd::Is(a) => {
            m.input("oracle", "is");
            a.source.record(&mut m);
            let spec = a.source.source().load()?;
            let log_w = importance_log_weights(&spec, a.n, a.df, a.seed)?;
            let r = summarize_weights(&log_w)?;
            m.emit(&a.out, &(serde_json::to_string_pretty(&r)? + "\n"))?;
            if let Some(h) = &a.hist {
                m.emit(h, &weight_histogram_csv(&log_w, a.bins))?;
            }
            m.finish(&a.out)?;
            println!(
                "estimate={:.6e} std_error={:.3e} ci95=[{:.6e},{:.6e}] ess={:.1}",
                r.estimate, r.std_error, r.ci95.0, r.ci95.1, r.ess
            );
        }
        OracleCmd::Quad(a) => {
            m.input("oracle", "quad");
            a.source.record(&mut m);
            let spec = a.source.source().load()?;
            let integral = riemann_integrate(spec.density().as_ref(), a.halfwidth, a.step)?;
            let out = QuadOutput { integral, halfwidth: a.halfwidth, step: a.step };
            m.emit(&a.out, &(serde_json::to_string_pretty(&out)? + "\n"))?;
            m.finish(&a.out)?;
            println!("integral={integral:.9e}");
        }
        OracleCmd::L2Surface(a) => {
            m.input("oracle", "l2-surface");
            a.source.record(&mut m);
            m.input("calib", a.calib.display());
            let config = read_calibration(&a.calib)?.to_config()?;
            let spec = a.source.source().load()?;
            let problem = L2Problem::new(&spec, &config.grid, config.gamma, a.halfwidth, a.step)?;
            let err = problem.error(config.lambda)?;
            m.emit(&a.out, &problem.surface_csv(config.lambda)?)?;
            m.finish(&a.out)?;
            println!("l2={err:.6e} lambda={}", config.lambda);
        }
    }
    Ok(0)
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    configure_threads()?;
    match &cli.command {
        Cmd::Calibrate(a) => cmd_calibrate(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Oracle(c) => cmd_oracle(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
