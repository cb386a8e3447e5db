use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use parareach_core::presets::{preset, PRESET_NAMES};
use parareach_core::*;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "parareach", version, about = "Reachable-set outer approximations for linear systems under integral quadratic constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one time-varying paraboloid from the seed.
    Propagate(PropagateArgs),
    /// Build a paraboloid family and export reachable-set slices.
    Reach(ReachArgs),
    /// Check a family (or a slice file) against sampled admissible trajectories.
    Verify(VerifyArgs),
    /// List the built-in examples, or write all their data with --out.
    Examples(ExamplesArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ProblemArgs {
    /// System file (JSON) with an optional seed paraboloid and horizon.
    #[arg(long, conflicts_with = "example")]
    system: Option<PathBuf>,
    /// Built-in example (see `parareach examples`).
    #[arg(long)]
    example: Option<String>,
    /// Time horizon T.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1e-12)]
    abs_tol: f64,
    /// Output directory.
    #[arg(long, default_value = "parareach-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct FamilyArgs {
    /// Explicit scalings, comma separated, starting at 1.
    #[arg(long, value_delimiter = ',', conflicts_with = "members")]
    gammas: Option<Vec<f64>>,
    /// Number of scalings spread uniformly over [1, gamma_bar].
    #[arg(long)]
    members: Option<usize>,
    /// Slab thickness used to bound the scalings.
    #[arg(long)]
    eps_q: Option<f64>,
}

#[derive(Args)]
struct PropagateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Scaling applied to the seed.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

#[derive(Args)]
struct ReachArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    family: FamilyArgs,
    /// Slice time (repeatable).
    #[arg(long = "time")]
    times: Vec<f64>,
    /// Grid cells per axis for slices (points are cell centres).
    #[arg(long)]
    grid: Option<usize>,
    /// Also export a tube of this many evenly spaced slices.
    #[arg(long)]
    tube: Option<usize>,
    #[arg(long)]
    skip_assumptions: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    family: FamilyArgs,
    /// Check time (repeatable); defaults to ten even times over the horizon.
    #[arg(long = "time")]
    times: Vec<f64>,
    /// Number of admissible trajectories.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    segments: usize,
    /// Slice file (from `reach`) to check instead of only the family; needs one --time.
    #[arg(long)]
    slice: Option<PathBuf>,
    /// Time of the coverage check; defaults to the last check time.
    #[arg(long)]
    coverage_time: Option<f64>,
    /// Coverage grid cells per axis.
    #[arg(long, default_value_t = 20)]
    grid: usize,
    /// Membership margin tolerance.
    #[arg(long, default_value_t = 1e-8)]
    margin: f64,
}

#[derive(Args)]
struct ExamplesArgs {
    /// Write system files and plot data for every example under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    kind: String,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError {
        kind: "invalid_config".into(),
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Everything needed to run the pipeline on one problem.
struct Problem {
    name: String,
    system: IqcSystem,
    seed: Paraboloid,
    horizon: f64,
    gammas: GammaSpec,
    times: Vec<f64>,
}

fn load_problem(args: &ProblemArgs) -> CliResult<Problem> {
    let mut problem = match (&args.system, &args.example) {
        (Some(path), None) => {
            let file = SystemFile::read(path)?;
            let seed = file.seed()?.ok_or_else(|| {
                config_error(format!("{}: no seed_paraboloid given", path.display()))
            })?;
            let horizon = file.horizon.unwrap_or(1.0);
            Problem {
                name: path.display().to_string(),
                system: file.system()?,
                seed,
                horizon,
                gammas: GammaSpec::Uniform(16),
                times: vec![horizon],
            }
        }
        (None, Some(name)) => {
            let name = if name == "ex1" { "ex1-family" } else { name.as_str() };
            let p = preset(name)?;
            Problem {
                name: p.name.into(),
                system: p.system,
                seed: p.seed,
                horizon: p.horizon,
                gammas: p.gammas,
                times: p.times,
            }
        }
        _ => return Err(config_error("give exactly one of --system or --example")),
    };
    if let Some(h) = args.horizon {
        if !(h > 0.0) {
            return Err(config_error("--horizon must be positive"));
        }
        problem.horizon = h;
        problem.times.retain(|t| *t <= h);
        if problem.times.is_empty() {
            problem.times.push(h);
        }
    }
    Ok(problem)
}

fn integrator(args: &ProblemArgs, horizon: f64) -> CliResult<IntegratorConfig> {
    let cfg = IntegratorConfig {
        rel_tol: args.rel_tol,
        abs_tol: args.abs_tol,
        ..IntegratorConfig::default().with_t_end(horizon)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn family_config(problem: &Problem, pa: &ProblemArgs, fa: &FamilyArgs) -> CliResult<FamilyConfig> {
    let gammas = match (&fa.gammas, fa.members) {
        (Some(list), _) => GammaSpec::Explicit(list.clone()),
        (None, Some(0)) => return Err(config_error("--members must be at least 1")),
        (None, Some(n)) => GammaSpec::Uniform(n),
        (None, None) => problem.gammas.clone(),
    };
    Ok(FamilyConfig {
        gammas,
        eps_q: fa.eps_q,
        integrator: integrator(pa, problem.horizon)?,
        ..FamilyConfig::default()
    })
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| {
        CliError::from(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(BufWriter::new(file))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> CliResult<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn paraboloid_json(p: &Paraboloid) -> Value {
    let e = p.e();
    let rows: Vec<Vec<f64>> = (0..e.nrows()).map(|i| e.row(i).iter().copied().collect()).collect();
    json!({ "E": rows, "f": p.f().as_slice(), "g": p.g() })
}

fn tvp_json(tvp: &TimeVaryingParaboloid) -> Value {
    let nodes: Vec<Value> = (0..tvp.len())
        .map(|k| {
            let (t, p) = tvp.node(k);
            let mut v = paraboloid_json(p);
            v["t"] = json!(t);
            v
        })
        .collect();
    json!({ "gamma": tvp.gamma(), "escape_time": tvp.escape_time(), "nodes": nodes })
}

fn slice_json(s: &ReachSlice) -> Value {
    let points: Vec<&[f64]> = s.points.iter().map(|p| p.as_slice()).collect();
    let argmin: Vec<f64> = s.argmin.iter().map(|&k| s.gammas[k]).collect();
    json!({ "t": s.t, "points": points, "xq_max": s.xq_max, "argmin_gamma": argmin })
}

fn time_tag(t: f64) -> String {
    format!("{t}")
}

fn cmd_propagate(args: PropagateArgs) -> CliResult<u8> {
    let problem = load_problem(&args.problem)?;
    let cfg = integrator(&args.problem, problem.horizon)?;
    let tvp = propagate_scaled(&problem.seed, args.gamma, &problem.system, &cfg)?;
    let out = &args.problem.out;
    match args.problem.format {
        Format::Csv => {
            let mut w = create(out, "tvp.csv")?;
            tvp.write_csv(&mut w)?;
            w.flush()?;
        }
        Format::Json => write_json(out, "tvp.json", &tvp_json(&tvp))?,
    }
    let manifest = json!({
        "problem": problem.name,
        "gamma": args.gamma,
        "horizon": problem.horizon,
        "escape_time": tvp.escape_time(),
        "end": tvp.end(),
        "nodes": tvp.len(),
        "final": paraboloid_json(tvp.final_paraboloid()),
    });
    write_json(out, "manifest.json", &manifest)?;
    Ok(if tvp.escape_time().is_some() { 2 } else { 0 })
}

fn default_grid(n: usize) -> usize {
    match n {
        1 => 401,
        2 => 81,
        3 => 21,
        _ => 7,
    }
}

fn slice_on_grid(fam: &ParaboloidFamily, t: f64, per_axis: usize) -> CliResult<ReachSlice> {
    let b = fam.slice_bounds(t, 64)?;
    let pts = if per_axis == 1 {
        vec![b.anchor.clone()]
    } else {
        GridSpec::uniform(b.lower, b.upper, per_axis)?.centers()
    };
    Ok(fam.reach_slice(t, pts)?)
}

fn write_slice(out: &Path, format: Format, slice: &ReachSlice, stem: &str) -> CliResult<()> {
    match format {
        Format::Csv => {
            let mut w = create(out, &format!("{stem}.csv"))?;
            slice.write_csv(&mut w)?;
            w.flush()?;
        }
        Format::Json => write_json(out, &format!("{stem}.json"), &slice_json(slice))?,
    }
    Ok(())
}

fn run_reach(
    problem: &Problem,
    fam_cfg: &FamilyConfig,
    times: &[f64],
    grid: Option<usize>,
    tube: Option<usize>,
    assumptions: bool,
    out: &Path,
    format: Format,
) -> CliResult<()> {
    let fam = build_family(&problem.seed, &problem.system, fam_cfg)?;
    let per_axis = grid.unwrap_or_else(|| default_grid(problem.seed.dim()));
    if per_axis == 0 {
        return Err(config_error("--grid must be at least 1"));
    }
    for &t in times {
        let slice = slice_on_grid(&fam, t, per_axis)?;
        write_slice(out, format, &slice, &format!("slice_t{}", time_tag(t)))?;
    }
    if let Some(k) = tube {
        if k < 2 {
            return Err(config_error("--tube needs at least 2 slices"));
        }
        let end = fam.end();
        let slices = (0..k)
            .map(|i| slice_on_grid(&fam, end * i as f64 / (k - 1) as f64, per_axis))
            .collect::<CliResult<Vec<_>>>()?;
        match format {
            Format::Csv => {
                let mut w = create(out, "tube.csv")?;
                write_tube_csv(&slices, &mut w)?;
                w.flush()?;
            }
            Format::Json => {
                let all: Vec<Value> = slices.iter().map(slice_json).collect();
                write_json(out, "tube.json", &Value::Array(all))?;
            }
        }
    }
    let report = if assumptions {
        Some(check_assumptions(&fam, &problem.system, &AssumptionConfig::default())?)
    } else {
        None
    };
    let manifest: Value = serde_json::from_str(&fam.manifest_json(report.as_ref())?).map_err(Error::from)?;
    write_json(out, "family.json", &manifest)?;
    Ok(())
}

fn cmd_reach(args: ReachArgs) -> CliResult<u8> {
    let problem = load_problem(&args.problem)?;
    let fam_cfg = family_config(&problem, &args.problem, &args.family)?;
    let times = if args.times.is_empty() { problem.times.clone() } else { args.times.clone() };
    run_reach(
        &problem,
        &fam_cfg,
        &times,
        args.grid,
        args.tube,
        !args.skip_assumptions,
        &args.problem.out,
        args.problem.format,
    )?;
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> CliResult<u8> {
    let problem = load_problem(&args.problem)?;
    let fam_cfg = family_config(&problem, &args.problem, &args.family)?;
    if args.n == 0 {
        return Err(config_error("--n must be at least 1"));
    }
    let mut times = args.times.clone();
    if times.is_empty() {
        times = (1..=10).map(|k| problem.horizon * k as f64 / 10.0).collect();
        times.extend(problem.times.iter().filter(|t| **t > 0.0 && **t <= problem.horizon));
        times.sort_by(f64::total_cmp);
        times.dedup();
    }
    let coverage_time = args.coverage_time.unwrap_or(*times.last().expect("nonempty"));
    if !times.contains(&coverage_time) {
        times.push(coverage_time);
        times.sort_by(f64::total_cmp);
    }
    let fam = build_family(&problem.seed, &problem.system, &fam_cfg)?;
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let cfg = OracleConfig {
        n_trajectories: args.n,
        segments: args.segments,
        seed: args.seed,
        t_end,
        sample_times: times.clone(),
        ..OracleConfig::default()
    };
    let run = sample_admissible(&problem.system, &problem.seed, Some(&fam), &cfg)?;
    let out = &args.problem.out;
    for &t in &times {
        let mut w = create(out, &format!("endpoints_t{}.csv", time_tag(t)))?;
        write_endpoints_csv(&run.states_at(t)?, &mut w)?;
        w.flush()?;
    }
    let fam_report = soundness(&fam, &run, &times, args.margin)?;
    let mut violations = fam_report.violations.len();
    let mut report = json!({
        "problem": problem.name,
        "seed": args.seed,
        "attempted": run.attempted,
        "accepted": run.accepted(),
        "family": fam_report,
    });
    if let Some(path) = &args.slice {
        if args.times.len() != 1 {
            return Err(config_error("--slice needs exactly one --time"));
        }
        let file = File::open(path).map_err(|e| {
            CliError::from(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        let slice = ReachSlice::read_csv(times[0], file)?;
        let rep = slice_soundness(&slice, &run.states_at(times[0])?, args.margin)?;
        violations += rep.violations.len();
        report["slice"] = serde_json::to_value(&rep).map_err(Error::from)?;
    }
    let b = fam.slice_bounds(coverage_time, 64)?;
    let grid = GridSpec::uniform(b.lower, b.upper, args.grid)?;
    let ends: Vec<_> = run.states_at(coverage_time)?.into_iter().map(|s| s.x).collect();
    let cov = coverage(&fam, coverage_time, &ends, &grid, 0.0)?;
    report["coverage"] = json!({ "t": cov.t, "coverage": cov.coverage, "covered": cov.covered, "inside": cov.inside });
    let mut w = create(out, "coverage.json")?;
    cov.write_json(&mut w)?;
    w.flush()?;
    write_json(out, "soundness.json", &report)?;
    Ok(if violations == 0 { 0 } else { 1 })
}

fn cmd_examples(args: ExamplesArgs) -> CliResult<u8> {
    let Some(out) = args.out else {
        for name in PRESET_NAMES {
            let p = preset(name)?;
            println!("{:<11} {}", p.name, p.description);
        }
        return Ok(0);
    };
    for name in PRESET_NAMES {
        let p = preset(name)?;
        let dir = out.join(name);
        let mut w = create(&dir, "system.json")?;
        SystemFile::from_system(&p.system, Some(&p.seed), Some(p.horizon)).write(&mut w)?;
        w.flush()?;
        let integ = IntegratorConfig::default().with_t_end(p.horizon);
        let tvp = propagate(&p.seed, &p.system, &integ)?;
        let mut w = create(&dir, "tvp.csv")?;
        tvp.write_csv(&mut w)?;
        w.flush()?;
        let problem = Problem {
            name: name.into(),
            system: p.system,
            seed: p.seed,
            horizon: p.horizon,
            gammas: p.gammas.clone(),
            times: p.times.clone(),
        };
        let fam_cfg = FamilyConfig {
            gammas: p.gammas,
            integrator: integ,
            ..FamilyConfig::default()
        };
        let times: Vec<f64> = p.times.into_iter().filter(|t| *t < tvp.end() || tvp.is_complete()).collect();
        run_reach(&problem, &fam_cfg, &times, None, None, true, &dir, Format::Csv)?;
        eprintln!("wrote {}", dir.display());
    }
    Ok(0)
}

fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("PARAREACH_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| config_error(format!("PARAREACH_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = init_threads().and_then(|_| match cli.command {
        Command::Propagate(a) => cmd_propagate(a),
        Command::Reach(a) => cmd_reach(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Examples(a) => cmd_examples(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
            ExitCode::from(1)
        }
    }
}
