mod parse;
mod output;

use std::fmt::Write as _;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use qutrit_qsi::ensemble::{estimate_resources, simulate_ensemble, survivor_distribution};
use qutrit_qsi::montecarlo::{self, CampaignConfig, DEFAULT_TRIALS, RNG_ALGORITHM};
use qutrit_qsi::protocol::{grid_scan, iterate_map, Region, ScanMode, ScanQuantity};
use qutrit_qsi::qsi::{identify, Branch, CandidateSet, DecisionMode, IdentificationResult, OpKind};
use qutrit_qsi::state::CoeffPair;
use qutrit_qsi::QsiError;

use output::{emit, g17, Format, RunManifest, Table};

#[derive(Parser)]
#[command(name = "qutrit-qsi", version, about = "Nonlinear qutrit protocol and state identification simulator")]
struct Cli {
    /// Worker threads; 0 uses every logical core. Defaults to all cores for
    /// campaign and heatmap, 1 otherwise.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Iterate the coefficient map and print the trajectory.
    Map(MapArgs),
    /// Evaluate p1 or cumulative survival on a parameter grid.
    Heatmap(HeatmapArgs),
    /// Identify the hidden member of a candidate set.
    Identify(IdentifyArgs),
    /// Monte Carlo statistics over random candidate sets.
    Campaign(CampaignArgs),
    /// Ensemble size needed to run the protocol.
    Resources(ResourcesArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Ideal,
    Sampled,
    Expected,
}

impl ModeArg {
    fn name(self) -> &'static str {
        match self {
            ModeArg::Ideal => "ideal",
            ModeArg::Sampled => "sampled",
            ModeArg::Expected => "expected",
        }
    }
}

impl From<ModeArg> for DecisionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ideal => DecisionMode::Ideal,
            ModeArg::Sampled => DecisionMode::Sampled,
            ModeArg::Expected => DecisionMode::Expected,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScanModeArg {
    Direct,
    Rotated,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum QuantityArg {
    P1,
    Survival,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ReportFormat {
    Text,
    Jsonl,
}

#[derive(Args, Serialize)]
struct MapArgs {
    /// First coefficient, `re,im` or `rho@phi`.
    #[arg(allow_hyphen_values = true)]
    z1: String,
    /// Second coefficient.
    #[arg(allow_hyphen_values = true)]
    z2: String,
    #[arg(long, default_value_t = 1)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct HeatmapArgs {
    #[arg(long, value_enum, default_value_t = ScanModeArg::Direct)]
    mode: ScanModeArg,
    /// `x0,x1,y0,y1`; defaults to [0,2]² (direct) or ρ∈[0,2], φ∈[-π,π] (rotated).
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    #[arg(long, default_value_t = 101)]
    resolution: usize,
    #[arg(long, default_value_t = 1)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = QuantityArg::P1)]
    quantity: QuantityArg,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct IdentifyArgs {
    /// Candidate file: one `z1 z2` pair per line, `#` comments.
    #[arg(long)]
    set: PathBuf,
    /// 1-based line index (among candidates) of the unknown state.
    #[arg(long)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Ideal)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CampaignArgs {
    /// Set sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Ideal)]
    mode: ModeArg,
    /// Inclusive range `a..b` of iteration counts; overrides --iters.
    /// Each M is seeded with a value derived from --seed (printed per row).
    #[arg(long)]
    sweep_m: Option<String>,
    /// Magnitude range of random coefficients, `lo,hi`.
    #[arg(long)]
    rho_range: Option<String>,
    /// Phase range of random coefficients, `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    phi_range: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ResourcesArgs {
    #[arg(allow_hyphen_values = true)]
    z1: String,
    #[arg(allow_hyphen_values = true)]
    z2: String,
    #[arg(long, default_value_t = 1)]
    iters: usize,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Also simulate one ensemble of this many copies.
    #[arg(long)]
    simulate: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn input(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }
}

impl From<QsiError> for CliError {
    fn from(e: QsiError) -> Self {
        let code = match e {
            QsiError::DegenerateThetas { .. } | QsiError::NonConvergence { .. } | QsiError::Indeterminate => 3,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError { code: 1, msg: format!("i/o error: {e}") }
    }
}

type CliResult = Result<(), CliError>;

fn coeffs(z1: &str, z2: &str) -> Result<CoeffPair, CliError> {
    let a = parse::complex(z1).map_err(|e| CliError::input(format!("z1: {e}")))?;
    let b = parse::complex(z2).map_err(|e| CliError::input(format!("z2: {e}")))?;
    Ok(CoeffPair::new(a, b))
}

fn cmd_map(a: &MapArgs) -> CliResult {
    let c = coeffs(&a.z1, &a.z2)?;
    let traj = iterate_map(c, a.iters)?;
    let mut t = Table::new(&["n", "re_f1", "im_f1", "re_f2", "im_f2", "step_survival", "cumulative_survival"]);
    let mut cumulative = 1.0;
    for (n, p) in traj.points.iter().enumerate() {
        // row n is reached by step n, whose cost is the survival at point n-1
        let step = if n == 0 { 1.0 } else { traj.per_step_survival[n - 1] };
        cumulative *= step;
        t.push(vec![n.into(), p.z1.re.into(), p.z1.im.into(), p.z2.re.into(), p.z2.im.into(), step.into(), cumulative.into()]);
    }
    let manifest = RunManifest::new("map", a, None, None);
    emit(a.out.as_deref(), &manifest, |w| t.write(w, a.format))?;
    Ok(())
}

fn cmd_heatmap(a: &HeatmapArgs) -> CliResult {
    let mode = match a.mode {
        ScanModeArg::Direct => ScanMode::Direct,
        ScanModeArg::Rotated => ScanMode::Rotated,
    };
    let quantity = match a.quantity {
        QuantityArg::P1 => ScanQuantity::P1,
        QuantityArg::Survival => ScanQuantity::Survival,
    };
    let region = match &a.range {
        None => Region::default_for(mode),
        Some(s) => match parse::list(s).map_err(|e| CliError::input(format!("--range: {e}")))?[..] {
            [x0, x1, y0, y1] => Region { x: (x0, x1), y: (y0, y1) },
            _ => return Err(CliError::input("--range expects x0,x1,y0,y1")),
        },
    };
    let grid = grid_scan(region, a.resolution, a.iters, mode, quantity)?;
    let manifest = RunManifest::new("heatmap", a, None, None);
    emit(a.out.as_deref(), &manifest, |w| match a.format {
        Format::Csv => {
            let head: Vec<String> = std::iter::once("y\\x".to_string()).chain(grid.xs.iter().map(|&x| g17(x))).collect();
            writeln!(w, "{}", head.join(","))?;
            for (y, row) in grid.ys.iter().zip(&grid.values) {
                let line: Vec<String> = std::iter::once(g17(*y)).chain(row.iter().map(|&v| g17(v))).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            Ok(())
        }
        Format::Jsonl => {
            let mut t = Table::new(&["x", "y", "value"]);
            for (y, row) in grid.ys.iter().zip(&grid.values) {
                for (x, v) in grid.xs.iter().zip(row) {
                    t.push(vec![(*x).into(), (*y).into(), (*v).into()]);
                }
            }
            t.write(w, Format::Jsonl)
        }
    })?;
    Ok(())
}

fn render_identify(r: &IdentificationResult, a: &IdentifyArgs, k: usize) -> String {
    let cx = |z: qutrit_qsi::state::Complex| format!("{},{}", g17(z.re), g17(z.im));
    let mut s = String::new();
    let _ = writeln!(s, "identified index {}, loops {}", r.identified_index, r.loops);
    let _ = writeln!(s, "hidden index: {}", a.hidden);
    let _ = writeln!(s, "correct: {}", r.identified_index == a.hidden);
    let _ = writeln!(s, "candidates: {k}");
    let _ = writeln!(s, "mode: {}", a.mode.name());
    let _ = writeln!(s, "iterations per loop: {}", a.iters);
    let _ = writeln!(s, "path probability: {}", g17(r.path_probability));
    if let Some(p) = r.success_probability {
        let _ = writeln!(s, "success probability: {}", g17(p));
    }
    let _ = writeln!(s, "final coefficients: {} {}", cx(r.final_coeffs.z1), cx(r.final_coeffs.z2));
    for (i, l) in r.transcript.iter().enumerate() {
        let theta = l.theta_applied.map_or("none".to_string(), g17);
        let _ = writeln!(
            s,
            "loop {}: theta {} u2 {} M {} p_plus {} p_minus {} branch {} size {} -> {}",
            i + 1,
            theta,
            if l.u2_applied { "yes" } else { "no" },
            l.m_used,
            g17(l.branch_probs.0),
            g17(l.branch_probs.1),
            match l.branch_taken {
                Branch::Plus => "plus",
                Branch::Minus => "minus",
            },
            l.set_sizes.0,
            l.set_sizes.1
        );
    }
    for op in &r.applied_ops {
        let kind = match op.kind {
            OpKind::WRotation { theta } => format!("W({})", g17(theta)),
            OpKind::U2Swap => "u2".to_string(),
        };
        let _ = writeln!(s, "op (loop {}): {kind}", op.loop_number);
    }
    s
}

fn cmd_identify(a: &IdentifyArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.set)
        .map_err(|e| CliError::input(format!("{}: {e}", a.set.display())))?;
    let states = parse::candidate_file(&text).map_err(|e| CliError::input(format!("{}: {e}", a.set.display())))?;
    let set = CandidateSet::new(states);
    let k = set.len();
    let result = identify(&set, a.hidden, a.iters, a.mode.into(), a.seed)?;
    let manifest = RunManifest::new("identify", a, Some(a.seed), Some("ChaCha8 (rand_chacha 0.3)"));
    emit(a.out.as_deref(), &manifest, |w| match a.format {
        ReportFormat::Text => w.write_all(render_identify(&result, a, k).as_bytes()),
        ReportFormat::Jsonl => {
            let mut v = serde_json::to_value(&result)?;
            v["hidden_index"] = a.hidden.into();
            v["candidates"] = k.into();
            writeln!(w, "{v}")
        }
    })?;
    Ok(())
}

fn cmd_campaign(a: &CampaignArgs) -> CliResult {
    let ms = match &a.sweep_m {
        Some(s) => parse::usize_range(s).map_err(|e| CliError::input(format!("--sweep-m: {e}")))?,
        None => vec![a.iters],
    };
    let range = |s: &Option<String>, def: (f64, f64), name: &str| -> Result<(f64, f64), CliError> {
        s.as_deref().map_or(Ok(def), |s| parse::pair(s).map_err(|e| CliError::input(format!("{name}: {e}"))))
    };
    let rho_range = range(&a.rho_range, montecarlo::DEFAULT_RHO_RANGE, "--rho-range")?;
    let phi_range = range(&a.phi_range, montecarlo::DEFAULT_PHI_RANGE, "--phi-range")?;

    let mut t = Table::new(&[
        "k", "m", "mode", "seed", "trials", "completed", "failures",
        "success_rate", "success_std_error", "mean_loops", "std_loops",
    ]);
    for &k in &a.k {
        let base = CampaignConfig { rho_range, phi_range, ..CampaignConfig::new(k, a.iters, a.trials, a.seed, a.mode.into()) };
        base.validate()?;
        let runs = if a.sweep_m.is_some() {
            ms.iter()
                .map(|&m| (m, montecarlo::derive_seed(a.seed, m as u64)))
                .zip(montecarlo::sweep_m(&base, &ms)?)
                .map(|((m, seed), (_, s))| (m, seed, s))
                .collect()
        } else {
            vec![(a.iters, a.seed, montecarlo::run_campaign(&base)?)]
        };
        for (m, seed, s) in runs {
            t.push(vec![
                k.into(), m.into(), a.mode.name().into(), seed.into(),
                s.trials.into(), s.completed.into(), s.failures.into(),
                s.success_rate.into(), s.success_std_error().into(), s.mean_loops.into(), s.std_loops.into(),
            ]);
        }
    }
    let manifest = RunManifest::new("campaign", a, Some(a.seed), Some(RNG_ALGORITHM));
    emit(a.out.as_deref(), &manifest, |w| t.write(w, a.format))?;
    Ok(())
}

#[derive(Serialize)]
struct SimulationReport {
    initial_size: u64,
    seed: u64,
    final_survivors: u64,
    expected_survivors: f64,
    expected_std: f64,
    z_score: f64,
    undersized: bool,
    per_iteration: Vec<qutrit_qsi::ensemble::IterationRecord>,
}

fn cmd_resources(a: &ResourcesArgs) -> CliResult {
    let c = coeffs(&a.z1, &a.z2)?;
    let est = estimate_resources(c, a.iters, a.confidence)?;
    let sim = match a.simulate {
        None => None,
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let run = simulate_ensemble(c, a.iters, n, &mut rng)?;
            let dist = survivor_distribution(n, &run.step_survival_probs);
            let (mean, sd) = (dist.mean(), dist.variance().sqrt());
            let z = if sd > 0.0 { (run.final_survivors as f64 - mean) / sd } else { 0.0 };
            Some(SimulationReport {
                initial_size: n,
                seed: a.seed,
                final_survivors: run.final_survivors,
                expected_survivors: mean,
                expected_std: sd,
                z_score: z,
                undersized: run.undersized,
                per_iteration: run.per_iteration,
            })
        }
    };
    let seed = a.simulate.map(|_| a.seed);
    let manifest = RunManifest::new("resources", a, seed, seed.map(|_| "ChaCha8 (rand_chacha 0.3)"));
    emit(a.out.as_deref(), &manifest, |w| match a.format {
        ReportFormat::Jsonl => {
            let v = serde_json::json!({ "estimate": est, "simulation": sim });
            writeln!(w, "{v}")
        }
        ReportFormat::Text => {
            let probs: Vec<String> = est.per_step_probs.iter().map(|&p| g17(p)).collect();
            writeln!(w, "iterations: {}", est.m)?;
            writeln!(w, "per-step survival: {}", probs.join(" "))?;
            writeln!(w, "cumulative survival: {}", g17(est.cumulative_survival))?;
            writeln!(w, "expected yield fraction: {}", g17(est.expected_yield_fraction))?;
            writeln!(w, "confidence: {}", g17(est.confidence))?;
            writeln!(w, "required size: {}", est.required_size_for_confidence)?;
            writeln!(w, "size method: {}", serde_json::to_value(est.method)?.as_str().unwrap_or("?"))?;
            if let Some(s) = &sim {
                writeln!(w, "simulated size: {} (seed {})", s.initial_size, s.seed)?;
                for (i, r) in s.per_iteration.iter().enumerate() {
                    writeln!(w, "step {}: groups {} survivors {} discarded {}", i + 1, r.attempts, r.survivors, r.discarded)?;
                }
                writeln!(w, "final survivors: {}", s.final_survivors)?;
                writeln!(w, "expected survivors: {} ± {}", g17(s.expected_survivors), g17(s.expected_std))?;
                writeln!(w, "z-score: {}", g17(s.z_score))?;
                if s.undersized {
                    writeln!(w, "warning: ensemble smaller than 4^M")?;
                }
            }
            Ok(())
        }
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_threads = match cli.cmd {
        Cmd::Campaign(_) | Cmd::Heatmap(_) => 0,
        _ => 1,
    };
    let threads = cli.threads.unwrap_or(default_threads);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    let res = match &cli.cmd {
        Cmd::Map(a) => cmd_map(a),
        Cmd::Heatmap(a) => cmd_heatmap(a),
        Cmd::Identify(a) => cmd_identify(a),
        Cmd::Campaign(a) => cmd_campaign(a),
        Cmd::Resources(a) => cmd_resources(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
