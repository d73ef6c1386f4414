use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dyadic_core::adapt::{build_adapted_grid, random_instance, verify_adapted_grid, GeneratorParams, Violation};
use dyadic_core::haar::{make_haar, HaarSystem, SignScheme};
use dyadic_core::norms::{
    shift_norm_curve, stripe_norm_curve, witness_ratio, write_norms_csv, NormCsvRow, NormEstimate, NormKind,
    NormOptions, OperatorHandle,
};
use dyadic_core::shift::make_axis_shift;
use dyadic_core::stripe::{make_classical_stripes, make_stripe_functions};
use dyadic_core::{DyadicSystem, Error, SpaceModel};
use rayon::prelude::*;
use serde::Serialize;

mod config;

use config::{ConfigError, RunConfig};

const SCHEMA_VERSION: u32 = 1;
/// Relative agreement required between a lower bound and its witness.
const WITNESS_TOL: f64 = 1e-12;
/// Absolute tolerance of the p = 2 isometry check on shifts.
const ISOMETRY_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "dyadic", about = "Dyadic cube verification suites and Haar-multiplier norm experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the cube-system properties exhaustively.
    VerifyCubes(Common),
    /// Generate, build and verify random adapted grids.
    AdaptDemo(Common),
    /// Sweep axis shifts over m and p.
    ShiftNorms(Common),
    /// Sweep classical stripe operators over λ and p.
    StripeNorms(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Inject faults so that verification must fail.
    #[arg(long)]
    faults: bool,
    /// Dump maximizing functions next to the CSV.
    #[arg(long)]
    witnesses: bool,
}

/// Exit status of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Status {
    Pass,
    Config,
    Violation,
    NonConvergence,
}

impl Status {
    fn code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::Config => 1,
            Status::Violation => 2,
            Status::NonConvergence => 3,
        }
    }

    fn of_error(e: &Error) -> Self {
        match e {
            Error::NonConvergence { .. } => Status::NonConvergence,
            Error::InvalidModel(_)
            | Error::DepthTooLarge { .. }
            | Error::InvalidParameter(_)
            | Error::DepthInsufficient(_)
            | Error::Io(_) => Status::Config,
            _ => Status::Violation,
        }
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    status: Status,
    config: &'a RunConfig,
    faults: bool,
    error: Option<String>,
    result: Option<T>,
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    write(tmp.path())?;
    tmp.persist(path).with_context(|| format!("rename to {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_atomic(path, |tmp| {
        let mut f = std::fs::File::create(tmp)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        Ok(())
    })
}

fn resolve(args: &Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if !args.out.is_dir() {
        return Err(ConfigError(format!("output directory {} does not exist", args.out.display())));
    }
    Ok(cfg)
}

fn system(cfg: &RunConfig) -> dyadic_core::Result<DyadicSystem> {
    Ok(DyadicSystem::new(SpaceModel::new(cfg.kind, cfg.k, cfg.depth)?))
}

/// Writes the report and returns the exit status.
fn finish<T: Serialize>(
    out: &Path,
    file: &str,
    command: &str,
    cfg: &RunConfig,
    faults: bool,
    outcome: Result<(Status, T), Error>,
) -> anyhow::Result<Status> {
    let (status, error, result) = match outcome {
        Ok((status, r)) => (status, None, Some(r)),
        Err(e) => (Status::of_error(&e), Some(e.to_string()), None),
    };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command,
        status,
        config: cfg,
        faults,
        error: error.clone(),
        result,
    };
    write_json(&out.join(file), &report)?;
    match error {
        Some(e) => eprintln!("{command}: {e}"),
        None => println!("{command}: {status:?}"),
    }
    Ok(status)
}

fn verify_cubes(args: &Common, cfg: &RunConfig) -> anyhow::Result<Status> {
    let outcome = system(cfg).map(|sys| {
        let report = sys.verify_axioms();
        (if report.ok { Status::Pass } else { Status::Violation }, report)
    });
    finish(&args.out, "verify_cubes.json", "verify-cubes", cfg, args.faults, outcome)
}

#[derive(Serialize)]
struct InstanceResult {
    seed: u64,
    family: usize,
    cubes: usize,
    ok: bool,
    max_measure_ratio: f64,
    violations: Vec<Violation>,
}

#[derive(Serialize)]
struct AdaptSummary {
    generator: Option<GeneratorParams>,
    passed: usize,
    failed: usize,
    instances: Vec<InstanceResult>,
}

fn adapt_demo(args: &Common, cfg: &RunConfig) -> anyhow::Result<Status> {
    let outcome = system(cfg).and_then(|sys| {
        let mut base = GeneratorParams::new(&sys, cfg.c_r, cfg.seed);
        if let Some(mu) = cfg.mu {
            base.mu = mu;
        }
        let instances = (0..cfg.instances as u64)
            .into_par_iter()
            .map(|i| {
                let params = GeneratorParams { seed: cfg.seed.wrapping_add(i), ..base.clone() };
                let input = random_instance(&sys, &params);
                let mut grid = build_adapted_grid(&sys, &input)?;
                if args.faults {
                    // drop one cell of A from the first σ(A) large enough to lose it
                    let victim = input
                        .family
                        .iter()
                        .find(|a| sys.cell_count_of(a) > 1)
                        .or(input.family.first())
                        .copied();
                    if let Some(a) = victim {
                        let cell = sys.cells(&a).cells()[0];
                        let region = grid.sigma_mut().get_mut(&a).expect("member");
                        *region = region.cells().iter().copied().filter(|&c| c != cell).collect();
                    }
                }
                let report = verify_adapted_grid(&sys, &input, &grid);
                Ok(InstanceResult {
                    seed: params.seed,
                    family: input.family.len(),
                    cubes: report.cubes,
                    ok: report.ok,
                    max_measure_ratio: report.max_measure_ratio,
                    violations: report.violations,
                })
            })
            .collect::<dyadic_core::Result<Vec<_>>>()?;
        let passed = instances.iter().filter(|r| r.ok).count();
        let summary = AdaptSummary {
            generator: (cfg.instances > 0).then_some(base),
            passed,
            failed: instances.len() - passed,
            instances,
        };
        let status = if summary.failed == 0 { Status::Pass } else { Status::Violation };
        Ok((status, summary))
    });
    finish(&args.out, "adapt_demo.json", "adapt-demo", cfg, args.faults, outcome)
}

fn tag(p: f64) -> String {
    format!("{p}").replace('.', "_")
}

#[derive(Serialize)]
struct NormEntry {
    operator: String,
    param: String,
    estimate: NormEstimate,
    witness_ratio: Option<f64>,
    extra: serde_json::Value,
}

/// Recomputes a witness on cells, optionally dumping it, and returns the CSV row.
fn record(
    haar: &HaarSystem,
    out: &Path,
    dump: bool,
    operator: &str,
    param: &str,
    estimate: &NormEstimate,
    recompute: impl Fn(&NormEstimate) -> dyadic_core::Result<f64>,
) -> anyhow::Result<(NormCsvRow, Option<f64>)> {
    let mut witness_file = String::new();
    let mut ratio = None;
    if estimate.kind == NormKind::LowerBound && !estimate.witness.is_empty() {
        ratio = Some(recompute(estimate)?);
        if dump {
            let name = format!("{operator}_p{}_{param}.csv", tag(estimate.p)).replace(['=', ' ', ','], "_");
            let dir = out.join("witnesses");
            std::fs::create_dir_all(&dir)?;
            let f = haar.synthesize::<f64>(&estimate.witness.iter().copied().collect())?;
            write_atomic(&dir.join(&name), |tmp| Ok(f.write_csv(tmp)?))?;
            witness_file = format!("witnesses/{name}");
        }
    }
    Ok((
        NormCsvRow {
            operator: operator.to_string(),
            p: estimate.p,
            param: param.to_string(),
            norm: estimate.value,
            kind: estimate.kind.as_str().to_string(),
            witness_file,
        },
        ratio,
    ))
}

fn witness_ok(estimate: &NormEstimate, ratio: Option<f64>) -> bool {
    ratio.is_none_or(|r| (r - estimate.value).abs() <= WITNESS_TOL * estimate.value.max(1.0))
}

fn shift_norms(args: &Common, cfg: &RunConfig) -> anyhow::Result<Status> {
    let mut csv_rows = Vec::new();
    let mut entries = Vec::new();
    let mut status = Status::Pass;
    let opts = NormOptions { restarts: cfg.restarts, seed: cfg.seed };
    let mut failure: Option<Error> = None;
    match system(cfg) {
        Err(e) => failure = Some(e),
        Ok(sys) => {
            let haar = make_haar(&sys, SignScheme::FirstHalf);
            for &p in &cfg.p_list {
                let rows = match shift_norm_curve(&sys, &cfg.m_list, p, cfg.c_r, cfg.per_class, opts) {
                    Ok(rows) => rows,
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                };
                for row in rows {
                    let tau = make_axis_shift(&sys, row.m, 0, 0..sys.depth())?;
                    let all: Vec<usize> = (0..tau.pairs().len()).collect();
                    let mut jobs = vec![("shift_full".to_string(), all, row.full.clone())];
                    for c in &row.per_class {
                        jobs.push((format!("shift_class_{}_{}_{}", c.k, c.j, c.i), c.pairs.clone(), c.estimate.clone()));
                    }
                    for (operator, pairs, estimate) in jobs {
                        let op = OperatorHandle::shift(&haar, &estimate.descriptor, &tau, &pairs)?;
                        let param = format!("m={}", row.m);
                        let (csv_row, ratio) = record(&haar, &args.out, args.witnesses, &operator, &param, &estimate, |e| {
                            witness_ratio(&haar, &op, &e.witness, e.p)
                        })?;
                        if !witness_ok(&estimate, ratio) || (p == 2.0 && (estimate.value - 1.0).abs() > ISOMETRY_TOL) {
                            status = Status::Violation;
                        }
                        csv_rows.push(csv_row);
                        entries.push(NormEntry {
                            operator,
                            param,
                            estimate,
                            witness_ratio: ratio,
                            extra: serde_json::json!({ "ell": row.ell, "classes": row.classes }),
                        });
                    }
                }
            }
        }
    }
    write_atomic(&args.out.join("shift_norms.csv"), |tmp| Ok(write_norms_csv(tmp, &csv_rows)?))?;
    let outcome = match failure {
        Some(e) => Err(e),
        None => Ok((status, entries)),
    };
    finish(&args.out, "shift_norms.json", "shift-norms", cfg, args.faults, outcome)
}

fn stripe_norms(args: &Common, cfg: &RunConfig) -> anyhow::Result<Status> {
    let mut csv_rows = Vec::new();
    let mut entries = Vec::new();
    let mut status = Status::Pass;
    let opts = NormOptions { restarts: cfg.restarts, seed: cfg.seed };
    let mut failure: Option<Error> = None;
    match system(cfg) {
        Err(e) => failure = Some(e),
        Ok(sys) => {
            let haar = make_haar(&sys, SignScheme::FirstHalf);
            for &p in &cfg.p_list {
                let rows = match stripe_norm_curve(&sys, &cfg.lambda_list, p, opts) {
                    Ok(rows) => rows,
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                };
                for row in rows {
                    let family = make_classical_stripes(&sys, row.lambda)?;
                    let functions = make_stripe_functions(&family, &haar);
                    let op = OperatorHandle::stripe(&functions, &row.norm.descriptor, 1)?;
                    let param = format!("lambda={}", row.lambda);
                    let (csv_row, ratio) = record(&haar, &args.out, args.witnesses, "stripe_m1", &param, &row.norm, |e| {
                        witness_ratio(&haar, &op, &e.witness, e.p)
                    })?;
                    if !witness_ok(&row.norm, ratio) {
                        status = Status::Violation;
                    }
                    csv_rows.push(csv_row);
                    entries.push(NormEntry {
                        operator: "stripe_m1".into(),
                        param,
                        estimate: row.norm.clone(),
                        witness_ratio: ratio,
                        extra: serde_json::json!({
                            "m_count": row.m_count,
                            "upper_envelope": row.upper_envelope,
                            "lower_envelope": row.lower_envelope,
                        }),
                    });
                }
            }
        }
    }
    write_atomic(&args.out.join("stripe_norms.csv"), |tmp| Ok(write_norms_csv(tmp, &csv_rows)?))?;
    let outcome = match failure {
        Some(e) => Err(e),
        None => Ok((status, entries)),
    };
    finish(&args.out, "stripe_norms.json", "stripe-norms", cfg, args.faults, outcome)
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let (name, args) = match &cli.command {
        Command::VerifyCubes(a) => ("verify-cubes", a),
        Command::AdaptDemo(a) => ("adapt-demo", a),
        Command::ShiftNorms(a) => ("shift-norms", a),
        Command::StripeNorms(a) => ("stripe-norms", a),
    };
    let cfg = match resolve(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{name}: {e}");
            return Ok(Status::Config);
        }
    };
    if args.faults && !matches!(cli.command, Command::AdaptDemo(_)) {
        eprintln!("{name}: --faults is only available for adapt-demo");
        return Ok(Status::Config);
    }
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::VerifyCubes(_) => verify_cubes(args, &cfg),
        Command::AdaptDemo(_) => adapt_demo(args, &cfg),
        Command::ShiftNorms(_) => shift_norms(args, &cfg),
        Command::StripeNorms(_) => stripe_norms(args, &cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Config.code())
        }
    }
}
