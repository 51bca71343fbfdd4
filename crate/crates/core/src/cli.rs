//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::diagnostics::{
    self, check_wstar_convergence, default_vanishing_bank, escaping_mass_demo, geometric_path, LscSequence,
    LscSettings, SublevelReport,
};
use crate::error::{Error, Result};
use crate::fixtures::{random_instance, seeded_rng, Sizes};
use crate::io::{
    file_digest, fmt_f64, parse_problem, write_csv, write_problem, InputRecord, LoadedProblem, MTable, Metadata,
    RunManifest,
};
use crate::measure::indicator_bank;
use crate::model::TeamProblem;
use crate::reduction::{build_lambda_grid, reduce, GridSpec, DEFAULT_GRID_CAP};
use crate::solvers::{solve, Method, SolveOptions, SolveResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CAP: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "teamci", version, about = "Static team problems via the common-information reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a problem file and list every violated invariant
    Validate { file: PathBuf },
    /// Solve a problem and write the result, policy table and manifest
    Solve(SolveArgs),
    /// Write the reduced-cost table M(x0, lambda) as CSV
    Reduce(ReduceArgs),
    /// Convergence, tightness and growth diagnostics
    Diagnose {
        #[command(subcommand)]
        kind: DiagnoseKind,
    },
    /// Run brute force and the common-information pipeline side by side
    Compare(CompareArgs),
    /// Re-run a command from its manifest
    Replay {
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write a random problem file
    Generate {
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest size of each space
        #[arg(long, default_value_t = 3)]
        max_size: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Prescription grid: deterministic, randomized:R or affine:A1,A2/B1,B2
    #[arg(long)]
    grid: Option<String>,
    /// Enumeration cap; defaults to the file's setting
    #[arg(long)]
    cap: Option<u64>,
    #[arg(long, default_value = "teamci-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    file: PathBuf,
    #[arg(long, default_value = "ci")]
    method: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Person-by-person stopping tolerance
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_cycles: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    file: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct CompareArgs {
    file: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct ProblemDiag {
    file: PathBuf,
    /// Common atom label; defaults to the first atom of positive mass
    #[arg(long)]
    x0: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct SublevelArgs {
    #[command(flatten)]
    base: ProblemDiag,
    /// Sub-level threshold; defaults to `r_factor` times the row minimum
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    r_factor: f64,
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    #[arg(long, value_delimiter = ',', default_values_t = diagnostics::DEFAULT_RADII.to_vec())]
    radii: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
struct PathArgs {
    #[command(flatten)]
    base: ProblemDiag,
    #[arg(long, default_value_t = 64)]
    steps: usize,
    /// First tail index (1-based step number)
    #[arg(long, default_value_t = 48)]
    n0: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    continuity_tol: f64,
    /// Number of paths, each towards a different grid element
    #[arg(long, default_value_t = 5)]
    sequences: usize,
}

#[derive(Subcommand, Debug)]
enum DiagnoseKind {
    /// Pairings along a path of prescriptions towards the optimal one
    Wstar(PathArgs),
    /// Point masses escaping to infinity on an integer grid
    EscapingMass {
        #[arg(long, default_value_t = 20)]
        n_max: usize,
        #[arg(long, default_value_t = 0.05)]
        vanish_ratio: f64,
        #[arg(long, default_value = "teamci-out")]
        out_dir: PathBuf,
    },
    /// Tightness of the sub-level family on Y x U
    Tightness(SublevelArgs),
    /// Growth of c * prod q on (Y, U, X)
    Ic(SublevelArgs),
    /// Sub-level tightness, growth and channel floor together
    Sublevel(SublevelArgs),
    /// Lower semicontinuity of M along prescription paths
    Lsc(PathArgs),
}

/// Runs the CLI on the given arguments (program name first) and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, recorded) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::CapExceeded { .. } => EXIT_CAP,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn load(path: &Path) -> Result<(LoadedProblem, InputRecord)> {
    let loaded = parse_problem(path)?;
    let input = InputRecord {
        path: path.to_path_buf(),
        sha256: file_digest(path)?,
    };
    Ok((loaded, input))
}

fn grid_spec(common: &Common, meta: &Metadata) -> Result<GridSpec> {
    match common.grid.as_deref().or(meta.grid.as_deref()) {
        Some(s) => s.parse(),
        None => Ok(GridSpec::Deterministic),
    }
}

fn cap(common: &Common, meta: &Metadata) -> u128 {
    common.cap.unwrap_or(meta.enumeration_cap) as u128
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, body)?;
        Ok(())
    }

    fn finish(
        self,
        command: &str,
        args: Vec<String>,
        input: Option<InputRecord>,
        options: serde_json::Value,
        started: Instant,
    ) -> Result<()> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            input,
            options,
            outputs: self.written,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        };
        manifest.write(&self.dir.join("manifest.json"))
    }
}

fn dispatch(command: Command, args: Vec<String>) -> Result<i32> {
    match command {
        Command::Validate { file } => validate(&file),
        Command::Solve(a) => run_solve(a, args),
        Command::Reduce(a) => run_reduce(a, args),
        Command::Compare(a) => run_compare(a, args),
        Command::Diagnose { kind } => run_diagnose(kind, args),
        Command::Replay { manifest, out_dir } => replay(&manifest, out_dir),
        Command::Generate { out, seed, max_size } => {
            if max_size == 0 {
                return Err(Error::Rejected("--max-size must be positive".into()));
            }
            let mut rng = seeded_rng(seed);
            let sizes = Sizes::sample(&mut rng, max_size);
            let p = random_instance(&mut rng, &sizes);
            let meta = Metadata {
                name: Some(format!("random-{seed}")),
                seed,
                ..Metadata::default()
            };
            write_problem(&out, &p, meta)?;
            println!("wrote {}", out.display());
            Ok(EXIT_OK)
        }
    }
}

fn validate(file: &Path) -> Result<i32> {
    let text = fs::read_to_string(file)?;
    let parsed: crate::io::ProblemFile = toml::from_str(&text)
        .map_err(|e| Error::parse(file.display().to_string(), e.to_string().trim_end()))?;
    match parsed.to_problem() {
        Ok(p) => {
            println!(
                "{}: ok ({} agents, {} atoms)",
                file.display(),
                p.n_agents(),
                p.total_atoms()
            );
            Ok(EXIT_OK)
        }
        Err(Error::Validation(report)) => {
            println!("{}: {} violation(s)", file.display(), report.violations.len());
            print!("{report}");
            Ok(EXIT_VALIDATION)
        }
        Err(e) => Err(e),
    }
}

fn policy_rows(problem: &TeamProblem, result: &SolveResult) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (i, k) in result.profile.kernels().iter().enumerate() {
        let ny = problem.observation_sizes()[i];
        for (s, row) in k.rows().iter().enumerate() {
            for (u, w) in row.support() {
                rows.push(vec![
                    i.to_string(),
                    problem.common_space().atom(s / ny).label.clone(),
                    problem.observation_space(i).atom(s % ny).label.clone(),
                    problem.action_space(i).atom(u).label.clone(),
                    fmt_f64(w),
                ]);
            }
        }
    }
    rows
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn run_solve(a: SolveArgs, args: Vec<String>) -> Result<i32> {
    let started = Instant::now();
    let (loaded, input) = load(&a.file)?;
    let p = &loaded.problem;
    let method: Method = a.method.parse()?;
    let options = SolveOptions {
        method,
        grid: grid_spec(&a.common, &loaded.metadata)?,
        cap: cap(&a.common, &loaded.metadata),
        tol: a.tol,
        max_cycles: a.max_cycles,
        start: None,
    };
    let result = solve(p, &options)?;
    let check = p.expected_cost(&result.profile)?;
    let mut out = Outputs::new(&a.common.out_dir)?;
    let grid = if method == Method::Ci { options.grid.to_string() } else { String::new() };
    write_csv(
        &out.path("result.csv"),
        &strings(&["method", "grid", "value", "expected_cost", "evaluations"]),
        &[vec![
            method.to_string(),
            grid.clone(),
            fmt_f64(result.value),
            fmt_f64(check),
            result.evaluations.to_string(),
        ]],
    )?;
    write_csv(
        &out.path("policy.csv"),
        &strings(&["agent", "x0", "y", "u", "probability"]),
        &policy_rows(p, &result),
    )?;
    if let Some(trace) = &result.trace {
        let rows: Vec<Vec<String>> = trace
            .iter()
            .enumerate()
            .map(|(k, v)| vec![k.to_string(), fmt_f64(*v)])
            .collect();
        write_csv(&out.path("trace.csv"), &strings(&["step", "value"]), &rows)?;
    }
    let mut summary = json!({
        "method": method.to_string(),
        "value": result.value,
        "expected_cost": check,
        "evaluations": result.evaluations.to_string(),
    });
    if let Some(ci) = &result.ci {
        summary["grid"] = json!(grid);
        summary["grid_size"] = json!(ci.reduced.grid.len());
        summary["prescription"] = ci
            .solution
            .prescription
            .iter()
            .zip(&ci.reduced.common_labels)
            .map(|(c, l)| json!({ "x0": l, "element": c, "descriptor": c.map(|k| ci.reduced.grid.describe(k)) }))
            .collect();
    }
    if let Some(trace) = &result.trace {
        summary["steps"] = json!(trace.len() - 1);
    }
    out.text("summary.json", &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    println!("{method}: value {} (expected cost {})", fmt_f64(result.value), fmt_f64(check));
    let opts = json!({
        "method": method.to_string(),
        "grid": options.grid.to_string(),
        "cap": options.cap.to_string(),
        "tol": options.tol,
        "max_cycles": options.max_cycles,
        "seed": a.seed.unwrap_or(loaded.metadata.seed),
        "out_dir": a.common.out_dir,
    });
    out.finish("solve", args, Some(input), opts, started)?;
    Ok(EXIT_OK)
}

fn run_reduce(a: ReduceArgs, args: Vec<String>) -> Result<i32> {
    let started = Instant::now();
    let (loaded, input) = load(&a.file)?;
    let spec = grid_spec(&a.common, &loaded.metadata)?;
    let cap = cap(&a.common, &loaded.metadata);
    let grid = build_lambda_grid(&loaded.problem, &spec, cap)?;
    let cp = reduce(&loaded.problem, &grid)?;
    let mut out = Outputs::new(&a.common.out_dir)?;
    MTable::from_reduced(&cp).write(&out.path("mtable.csv"))?;
    println!("reduced table: {} rows x {} grid elements", cp.values.iter().flatten().count(), grid.len());
    let opts = json!({ "grid": spec.to_string(), "cap": cap.to_string(), "out_dir": a.common.out_dir });
    out.finish("reduce", args, Some(input), opts, started)?;
    Ok(EXIT_OK)
}

fn run_compare(a: CompareArgs, args: Vec<String>) -> Result<i32> {
    let started = Instant::now();
    let (loaded, input) = load(&a.file)?;
    let p = &loaded.problem;
    let cap = cap(&a.common, &loaded.metadata);
    let grid = grid_spec(&a.common, &loaded.metadata)?;
    let brute = solve(p, &SolveOptions { method: Method::Brute, cap, ..Default::default() })?;
    let ci = solve(p, &SolveOptions { method: Method::Ci, cap, grid: grid.clone(), ..Default::default() })?;
    let diff = ci.value - brute.value;
    println!("brute {}", fmt_f64(brute.value));
    println!("ci    {}", fmt_f64(ci.value));
    println!("difference {}", fmt_f64(diff));
    let mut out = Outputs::new(&a.common.out_dir)?;
    write_csv(
        &out.path("compare.csv"),
        &strings(&["brute", "ci", "difference", "grid"]),
        &[vec![fmt_f64(brute.value), fmt_f64(ci.value), fmt_f64(diff), grid.to_string()]],
    )?;
    let opts = json!({ "grid": grid.to_string(), "cap": cap.to_string(), "out_dir": a.common.out_dir });
    out.finish("compare", args, Some(input), opts, started)?;
    Ok(EXIT_OK)
}

fn pick_common(p: &TeamProblem, label: Option<&str>) -> Result<usize> {
    match label {
        Some(l) => {
            let k = p
                .common_space()
                .index_of(l)
                .ok_or_else(|| Error::Rejected(format!("no common atom labelled `{l}`")))?;
            if p.common_marginal()[k] <= 0.0 {
                return Err(Error::ZeroMass(l.to_string()));
            }
            Ok(k)
        }
        None => p
            .common_marginal()
            .iter()
            .position(|&m| m > 0.0)
            .ok_or_else(|| Error::ZeroMass("every common atom".into())),
    }
}

fn sublevel(a: &SublevelArgs) -> Result<(SublevelReport, LoadedProblem, InputRecord)> {
    let (loaded, input) = load(&a.base.file)?;
    let p = &loaded.problem;
    let x0 = pick_common(p, a.base.x0.as_deref())?;
    let spec = grid_spec(&a.base.common, &loaded.metadata)?;
    let grid = build_lambda_grid(p, &spec, cap(&a.base.common, &loaded.metadata))?;
    let cp = reduce(p, &grid)?;
    let row = cp.values[x0].as_ref().expect("positive mass");
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let r = a.r.unwrap_or(a.r_factor * min);
    let report = diagnostics::sublevel_tightness(p, &cp, x0, r, &a.radii, a.eps)?;
    Ok((report, loaded, input))
}

fn sublevel_options(a: &SublevelArgs, report: &SublevelReport) -> serde_json::Value {
    json!({
        "x0": report.x0,
        "r": report.r,
        "eps": a.eps,
        "radii": a.radii,
        "grid": a.base.common.grid,
        "out_dir": a.base.common.out_dir,
    })
}

fn run_diagnose(kind: DiagnoseKind, args: Vec<String>) -> Result<i32> {
    let started = Instant::now();
    match kind {
        DiagnoseKind::EscapingMass { n_max, vanish_ratio, out_dir } => {
            let bank = default_vanishing_bank();
            let r = escaping_mass_demo(n_max, &bank, vanish_ratio)?;
            let mut out = Outputs::new(&out_dir)?;
            let mut header = strings(&["n", "row_mass"]);
            for m in &r.members {
                header.push(m.clone());
                header.push(format!("{m}_underflow"));
            }
            let rows: Vec<Vec<String>> = r
                .rows
                .iter()
                .map(|row| {
                    let mut cells = vec![row.n.to_string(), fmt_f64(row.row_mass)];
                    for (v, u) in row.pairings.iter().zip(&row.underflow) {
                        cells.push(fmt_f64(*v));
                        cells.push(u.to_string());
                    }
                    cells
                })
                .collect();
            write_csv(&out.path("escaping_mass.csv"), &header, &rows)?;
            out.text("escaping_mass.txt", &r.to_string())?;
            print!("{r}");
            let opts = json!({ "n_max": n_max, "vanish_ratio": vanish_ratio, "out_dir": out_dir });
            out.finish("diagnose escaping-mass", args, None, opts, started)?;
            Ok(EXIT_OK)
        }
        DiagnoseKind::Tightness(a) | DiagnoseKind::Ic(a) | DiagnoseKind::Sublevel(a) => {
            let which = match args.get(1).map(String::as_str) {
                Some("tightness") => "tightness",
                Some("ic") => "ic",
                _ => "sublevel",
            };
            let (report, _loaded, input) = sublevel(&a)?;
            let mut out = Outputs::new(&a.base.common.out_dir)?;
            let text = match which {
                "tightness" => match &report.tightness {
                    Some(t) => t.to_string(),
                    None => "empty (trivially compact)\n".to_string(),
                },
                "ic" => format!("{}channel floor {}\n", report.ic, fmt_f64(report.channel_floor)),
                _ => report.to_string(),
            };
            if which != "ic" {
                if let Some(t) = &report.tightness {
                    let mut header = vec!["member".to_string()];
                    header.extend(t.schedule.iter().cloned());
                    let rows: Vec<Vec<String>> = t
                        .outside
                        .iter()
                        .zip(&report.members)
                        .map(|(row, k)| std::iter::once(k.to_string()).chain(row.iter().map(|v| fmt_f64(*v))).collect())
                        .collect();
                    write_csv(&out.path("tightness.csv"), &header, &rows)?;
                }
            }
            if which != "tightness" {
                let rows: Vec<Vec<String>> = report
                    .ic
                    .schedule
                    .iter()
                    .zip(&report.ic.bounds)
                    .map(|(l, b)| vec![l.clone(), fmt_f64(*b), (*b >= report.ic.level).to_string()])
                    .collect();
                write_csv(&out.path("ic.csv"), &strings(&["set", "min_outside", "reaches_level"]), &rows)?;
            }
            out.text(&format!("{which}.txt"), &text)?;
            print!("{text}");
            let opts = sublevel_options(&a, &report);
            out.finish(&format!("diagnose {which}"), args, Some(input), opts, started)?;
            Ok(EXIT_OK)
        }
        DiagnoseKind::Wstar(a) => run_paths(a, args, started, false),
        DiagnoseKind::Lsc(a) => run_paths(a, args, started, true),
    }
}

/// Geometric paths from the optimal grid element at `x0` towards other grid
/// elements, converging back to the optimum.
fn run_paths(a: PathArgs, args: Vec<String>, started: Instant, lsc: bool) -> Result<i32> {
    let (loaded, input) = load(&a.base.file)?;
    let p = &loaded.problem;
    let x0 = pick_common(p, a.base.x0.as_deref())?;
    if a.n0 == 0 || a.n0 > a.steps {
        return Err(Error::Rejected("--n0 must lie in 1..=steps".into()));
    }
    let spec = grid_spec(&a.base.common, &loaded.metadata)?;
    let grid = build_lambda_grid(p, &spec, cap(&a.base.common, &loaded.metadata).min(DEFAULT_GRID_CAP))?;
    let cp = reduce(p, &grid)?;
    let row = cp.values[x0].as_ref().expect("positive mass");
    let best = (0..row.len()).fold(0, |b, k| if row[k] < row[b] { k } else { b });
    let limit = grid.element(best);
    let targets: Vec<usize> = (0..grid.len()).filter(|&k| k != best).take(a.sequences).collect();
    let sequences = targets
        .iter()
        .map(|&k| {
            Ok(LscSequence {
                name: format!("towards element {k}"),
                terms: geometric_path(&limit, &grid.element(k), a.steps)?,
                limit: limit.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Outputs::new(&a.base.common.out_dir)?;
    let (name, text) = if lsc {
        let settings = LscSettings {
            n0: a.n0 - 1,
            wstar_tol: a.tol,
            tol: a.tol,
            continuity_tol: a.continuity_tol,
        };
        let r = diagnostics::lsc_probe(p, x0, &sequences, settings)?;
        let rows: Vec<Vec<String>> = r
            .outcomes
            .iter()
            .flat_map(|o| {
                o.values.iter().enumerate().map(move |(n, v)| {
                    vec![o.name.clone(), (n + 1).to_string(), fmt_f64(*v), fmt_f64(o.limit_value)]
                })
            })
            .collect();
        write_csv(&out.path("lsc.csv"), &strings(&["sequence", "n", "m", "m_limit"]), &rows)?;
        ("lsc", r.to_string())
    } else {
        let mut text = String::new();
        let mut rows = Vec::new();
        for seq in &sequences {
            for i in 0..p.n_agents() {
                let kernels: Vec<_> = seq.terms.iter().map(|t| t.part(i).clone()).collect();
                let bank = indicator_bank(p.observation_space(i), p.action_space(i));
                let r = check_wstar_convergence(
                    &kernels,
                    seq.limit.part(i),
                    &bank,
                    p.channel(i).reference(),
                    a.tol,
                    a.n0 - 1,
                )?;
                text.push_str(&format!("{} / agent {i}: {r}", seq.name));
                for (k, f) in r.functions.iter().enumerate() {
                    rows.push(vec![
                        seq.name.clone(),
                        i.to_string(),
                        k.to_string(),
                        fmt_f64(f.limit),
                        fmt_f64(f.tail_deviation),
                        f.converged.to_string(),
                    ]);
                }
            }
        }
        write_csv(
            &out.path("wstar.csv"),
            &strings(&["sequence", "agent", "function", "limit", "tail_deviation", "converged"]),
            &rows,
        )?;
        ("wstar", text)
    };
    out.text(&format!("{name}.txt"), &text)?;
    print!("{text}");
    let opts = json!({
        "x0": x0,
        "grid": spec.to_string(),
        "steps": a.steps,
        "n0": a.n0,
        "tol": a.tol,
        "continuity_tol": a.continuity_tol,
        "sequences": a.sequences,
        "out_dir": a.base.common.out_dir,
    });
    out.finish(&format!("diagnose {name}"), args, Some(input), opts, started)?;
    Ok(EXIT_OK)
}

/// Re-runs the recorded arguments, optionally into another directory, after
/// checking that the input file is unchanged.
fn replay(manifest: &Path, out_dir: Option<PathBuf>) -> Result<i32> {
    let m = RunManifest::read(manifest)?;
    if let Some(input) = &m.input {
        let now = file_digest(&input.path)?;
        if now != input.sha256 {
            return Err(Error::Rejected(format!(
                "input `{}` changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let mut args = m.args.clone();
    if let Some(dir) = out_dir {
        if let Some(k) = args.iter().position(|a| a == "--out-dir") {
            args.remove(k);
            if k < args.len() {
                args.remove(k);
            }
        }
        args.retain(|a| !a.starts_with("--out-dir="));
        args.push("--out-dir".into());
        args.push(dir.display().to_string());
    }
    let mut full = vec!["teamci".to_string()];
    full.extend(args);
    let code = run(full);
    let _ = std::io::stdout().flush();
    Ok(code)
}
