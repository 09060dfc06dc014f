//! Batch front door: generate spaces and operators, run the rounding
//! engine, the lemma checks, the rigidity extraction, and the
//! localization procedure, emitting JSON/CSV reports.
//!
//! Exit codes: 0 pass, 1 usage, 2 target not in hull, 3 invalid input,
//! 4 uncertified hypothesis, 5 conclusion violation (which indicates a
//! defect, not a mathematical counterexample).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use roe_lab::error::Error;
use roe_lab::linalg::{expm, CMatrix};
use roe_lab::localization::{derive_params, localize, LocalizationParams};
use roe_lab::operator::{BandedOperator, ProjectionFamily};
use roe_lab::report::{atomic_write, format_float, sha256_hex, to_json_string};
use roe_lab::rigidity::{
    check_halving_lemma, extract_map_with, ghost_transport_experiment, CoarseMapReportJson,
    ExtractOptions, LemmaOptions, LemmaReport, SpatialUnitary, Verdict,
};
use roe_lab::space::{generate, Disconnected, IndexSet, MetricSpace, SpaceKind};
use roe_lab::vecmeasure::{
    brute_force_oracle, round_to_subset_with, AtomicVectorMeasure, PivotStep, RoundingConfig,
};

type CliResult = Result<i32, Error>;

#[derive(Parser)]
#[command(name = "roe-lab", about = "Coarse geometry and Roe algebra experiments at desk scale")]
struct Cli {
    /// Relative tolerance override for operator-norm power iterations
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate spaces, operators, and unitaries
    Generate(GenerateArgs),
    /// Round a convex-hull point to the measure of a subset
    Round(RoundArgs),
    /// Extract a coarse map pair from a spatial unitary
    Rigidity(RigidityArgs),
    /// Run the projection-family halving lemma check
    Lemma(LemmaArgs),
    /// Run the operator-norm localization procedure
    Localize(LocalizeArgs),
    /// Compare ghost profiles of an operator and its conjugate
    Ghost(GhostArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Path,
    Cycle,
    Grid,
    Cayley,
    RandomGraph,
    BandedHermitian,
    BandedUnitary,
    PerturbedPermutation,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnDisconnected {
    Regenerate,
    Error,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Point count for path/cycle/random-graph
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Cyclic group, e.g. z12
    #[arg(long)]
    group: Option<String>,
    /// Comma-separated generators, e.g. 1,3 (symmetrized automatically)
    #[arg(long)]
    gens: Option<String>,
    /// Edge probability for random graphs
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "regenerate")]
    on_disconnected: OnDisconnected,
    /// Base space file for operator/unitary kinds
    #[arg(long)]
    space: Option<PathBuf>,
    /// Band width of the generated Hermitian seed
    #[arg(long, default_value_t = 1.0)]
    prop: f64,
    /// Operator norm of the generated Hermitian operator
    #[arg(long, default_value_t = 0.5)]
    norm: f64,
    /// Norm of the Hermitian generator H in exp(iH)
    #[arg(long, default_value_t = 0.08)]
    strength: f64,
    /// Emit the dense distance matrix instead of the edge list
    #[arg(long)]
    dense: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RoundArgs {
    #[arg(long)]
    measure: PathBuf,
    /// Target vector, comma-separated
    #[arg(long)]
    target: String,
    /// Embed the exhaustive oracle comparison (n <= 22)
    #[arg(long)]
    oracle: bool,
    /// Cap on exhaustively enumerated fractional completions
    #[arg(long, default_value_t = 20)]
    max_enum: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RigidityArgs {
    #[arg(long)]
    source: PathBuf,
    /// Target space file; defaults to the source space
    #[arg(long)]
    target_space: Option<PathBuf>,
    #[arg(long)]
    unitary: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    floor_threshold: f64,
    /// json, or csv to also flatten the expansion tables
    #[arg(long, default_value = "json")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long)]
    space: PathBuf,
    /// Unitary defining the conjugated coordinate-projection family;
    /// omit for the plain coordinate projections
    #[arg(long)]
    unitary: Option<PathBuf>,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    r: f64,
    /// Override for delta (defaults to epsilon / (2 N_r))
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 8)]
    halving_sample: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    space: PathBuf,
    /// Projection operator file
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Unitary for building p = u chi_B u* from a ball
    #[arg(long)]
    unitary: Option<PathBuf>,
    #[arg(long)]
    ball_center: Option<usize>,
    #[arg(long)]
    ball_radius: Option<f64>,
    /// Approximant operator file; omit to use truncate(p, --s)
    #[arg(long)]
    approximant: Option<PathBuf>,
    /// Approximant propagation bound
    #[arg(long)]
    s: Option<f64>,
    /// Witness vector = delta_x at this point (t = 0)
    #[arg(long)]
    zeta_point: Option<usize>,
    /// Witness vector file: JSON array of [re, im] pairs
    #[arg(long)]
    zeta_file: Option<PathBuf>,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GhostArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target_space: Option<PathBuf>,
    #[arg(long)]
    unitary: PathBuf,
    #[arg(long)]
    operator: PathBuf,
    /// Comma-separated prefix sizes of the exhaustion chain; defaults to
    /// doubling sizes up to the space
    #[arg(long)]
    exhaustion: Option<String>,
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    if let Ok(threads) = std::env::var("ROE_LAB_THREADS") {
        match threads.parse::<usize>() {
            Ok(k) if k >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
            _ => {
                eprintln!("usage error: ROE_LAB_THREADS must be a positive integer");
                return 1;
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code convention differs; usage problems are 1 here
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(tol) = cli.tol {
        if roe_lab::operator::set_op_norm_tolerance(tol).is_err() {
            eprintln!("usage error: --tol must be positive");
            return 1;
        }
    }
    let outcome = match cli.cmd {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Round(args) => cmd_round(args),
        Cmd::Rigidity(args) => cmd_rigidity(args),
        Cmd::Lemma(args) => cmd_lemma(args),
        Cmd::Localize(args) => cmd_localize(args),
        Cmd::Ghost(args) => cmd_ghost(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NotInHull { .. } => 2,
        Error::Uncertified(_) => 4,
        Error::ConclusionViolated(_) | Error::Internal(_) => 5,
        _ => 3,
    }
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

fn read_input(path: &Path) -> Result<(String, InputRecord), Error> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let record =
        InputRecord { path: path.display().to_string(), sha256: sha256_hex(&bytes) };
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::invalid(format!("{} is not UTF-8", path.display())))?;
    Ok((text, record))
}

fn load_space(path: &Path) -> Result<(Arc<MetricSpace>, InputRecord), Error> {
    let (text, record) = read_input(path)?;
    Ok((MetricSpace::from_json(&text)?, record))
}

fn emit(out: &Option<PathBuf>, text: &str, summary: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            atomic_write(path, text.as_bytes())?;
            println!("wrote {} ({summary})", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_floats(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("cannot parse '{s}' as a number")))
        })
        .collect()
}

/// Seeded banded Hermitian matrix on a space, scaled to the given norm.
fn banded_hermitian(
    space: &Arc<MetricSpace>,
    prop: f64,
    seed: u64,
    target_norm: f64,
) -> Result<CMatrix, Error> {
    let n = space.len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut h = CMatrix::zeros(n, n);
    for x in 0..n {
        for y in x..n {
            if space.dist(x, y) <= prop {
                let z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                if x == y {
                    h.set(x, y, Complex64::new(z.re, 0.0));
                } else {
                    h.set(x, y, z);
                    h.set(y, x, z.conj());
                }
            }
        }
    }
    let norm = h.op_norm(1e-10, 10_000)?;
    if norm == 0.0 {
        return Ok(h);
    }
    Ok(h.scaled(Complex64::new(target_norm / norm, 0.0)))
}

fn cmd_generate(args: GenerateArgs) -> CliResult {
    match args.kind {
        Kind::Path | Kind::Cycle | Kind::Grid | Kind::Cayley | Kind::RandomGraph => {
            let kind = match args.kind {
                Kind::Path => SpaceKind::Path {
                    n: args.n.ok_or_else(|| Error::domain("--n is required for paths"))?,
                },
                Kind::Cycle => SpaceKind::Cycle {
                    n: args.n.ok_or_else(|| Error::domain("--n is required for cycles"))?,
                },
                Kind::Grid => SpaceKind::Grid {
                    rows: args.rows.ok_or_else(|| Error::domain("--rows is required for grids"))?,
                    cols: args.cols.ok_or_else(|| Error::domain("--cols is required for grids"))?,
                },
                Kind::Cayley => {
                    let group = args
                        .group
                        .as_deref()
                        .ok_or_else(|| Error::domain("--group is required for cayley"))?;
                    let order: usize = group
                        .strip_prefix('z')
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::invalid(format!("unsupported group '{group}' (use z<order>)")))?;
                    let gens = args
                        .gens
                        .as_deref()
                        .ok_or_else(|| Error::domain("--gens is required for cayley"))?
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<u64>().map_err(|_| {
                                Error::invalid(format!("cannot parse generator '{s}'"))
                            })
                        })
                        .collect::<Result<Vec<u64>, Error>>()?;
                    SpaceKind::Cayley { order, gens }
                }
                Kind::RandomGraph => {
                    let Some(seed) = args.seed else {
                        eprintln!("usage error: --seed is required for randomized kinds");
                        return Ok(1);
                    };
                    SpaceKind::RandomGraph {
                        n: args.n.ok_or_else(|| Error::domain("--n is required for random graphs"))?,
                        p: args.p.ok_or_else(|| Error::domain("--p is required for random graphs"))?,
                        seed,
                        on_disconnected: match args.on_disconnected {
                            OnDisconnected::Regenerate => Disconnected::Regenerate,
                            OnDisconnected::Error => Disconnected::Error,
                        },
                    }
                }
                _ => unreachable!(),
            };
            let space = generate(&kind)?;
            let text = if args.dense { space.to_dist_json() } else { space.to_json() };
            emit(&args.out, &text, space.label())?;
            Ok(0)
        }
        Kind::BandedHermitian => {
            let seed = match args.seed {
                Some(s) => s,
                None => {
                    eprintln!("usage error: --seed is required for randomized kinds");
                    return Ok(1);
                }
            };
            let path = args
                .space
                .as_deref()
                .ok_or_else(|| Error::domain("--space is required for operator kinds"))?;
            let (space, _) = load_space(path)?;
            let h = banded_hermitian(&space, args.prop, seed, args.norm)?;
            let op = BandedOperator::from_matrix(space, 1, h)?;
            emit(&args.out, &op.to_json(), "banded hermitian")?;
            Ok(0)
        }
        Kind::BandedUnitary => {
            let seed = match args.seed {
                Some(s) => s,
                None => {
                    eprintln!("usage error: --seed is required for randomized kinds");
                    return Ok(1);
                }
            };
            let path = args
                .space
                .as_deref()
                .ok_or_else(|| Error::domain("--space is required for operator kinds"))?;
            let (space, _) = load_space(path)?;
            let h = banded_hermitian(&space, args.prop, seed, args.strength)?;
            let u = expm(&h.scaled(Complex64::new(0.0, 1.0)));
            let unitary = SpatialUnitary::new(space.clone(), space.clone(), 1, u)?;
            emit(&args.out, &unitary.to_json(), "banded unitary")?;
            Ok(0)
        }
        Kind::PerturbedPermutation => {
            let seed = match args.seed {
                Some(s) => s,
                None => {
                    eprintln!("usage error: --seed is required for randomized kinds");
                    return Ok(1);
                }
            };
            let path = args
                .space
                .as_deref()
                .ok_or_else(|| Error::domain("--space is required for operator kinds"))?;
            let (space, _) = load_space(path)?;
            let n = space.len();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let base = SpatialUnitary::from_permutation(space.clone(), space.clone(), &perm, 1)?;
            let h = banded_hermitian(&space, args.prop, seed.wrapping_add(1), args.strength)?;
            let mat = base.matrix().mul(&expm(&h.scaled(Complex64::new(0.0, 1.0))));
            let unitary = SpatialUnitary::new(space.clone(), space.clone(), 1, mat)?;
            emit(&args.out, &unitary.to_json(), "perturbed permutation")?;
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct RoundReport {
    inputs: RoundInputs,
    parameters: RoundParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<RoundBody>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleBody>,
    #[serde(skip_serializing_if = "Option::is_none")]
    not_in_hull: Option<HullWitness>,
    verdict: String,
}

#[derive(Serialize)]
struct RoundInputs {
    measure: InputRecord,
}

#[derive(Serialize)]
struct RoundParams {
    target: Vec<f64>,
    max_enum: usize,
    oracle: bool,
}

#[derive(Serialize)]
struct RoundBody {
    subset: IndexSet,
    error: f64,
    bound: f64,
    bound_is_exact: bool,
    fractional_after: usize,
    pivot_trace: Vec<PivotStep>,
}

#[derive(Serialize)]
struct OracleBody {
    subset: IndexSet,
    error: f64,
}

#[derive(Serialize)]
struct HullWitness {
    functional: Vec<f64>,
    margin: f64,
}

fn cmd_round(args: RoundArgs) -> CliResult {
    let (text, record) = read_input(&args.measure)?;
    let mu = AtomicVectorMeasure::from_json(&text)?;
    let target = parse_floats(&args.target)?;
    let cfg = RoundingConfig { max_enumerated_fractional: args.max_enum, ..Default::default() };
    let parameters =
        RoundParams { target: target.clone(), max_enum: args.max_enum, oracle: args.oracle };
    match round_to_subset_with(&mu, &target, &cfg) {
        Ok(res) => {
            let oracle = if args.oracle {
                let (subset, error) = brute_force_oracle(&mu, &target, 22)?;
                Some(OracleBody { subset, error })
            } else {
                None
            };
            let report = RoundReport {
                inputs: RoundInputs { measure: record },
                parameters,
                result: Some(RoundBody {
                    subset: res.subset,
                    error: res.error,
                    bound: res.bound,
                    bound_is_exact: res.bound_is_exact,
                    fractional_after: res.fractional_after,
                    pivot_trace: res.fractional_trace,
                }),
                oracle,
                not_in_hull: None,
                verdict: "pass".to_string(),
            };
            emit(&args.out, &to_json_string(&report), "pass")?;
            Ok(0)
        }
        Err(Error::NotInHull { functional, margin }) => {
            let report = RoundReport {
                inputs: RoundInputs { measure: record },
                parameters,
                result: None,
                oracle: None,
                not_in_hull: Some(HullWitness { functional, margin }),
                verdict: "not_in_hull".to_string(),
            };
            emit(&args.out, &to_json_string(&report), "not in hull")?;
            Ok(2)
        }
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct RigidityReport {
    inputs: RigidityInputs,
    parameters: RigidityParams,
    unitary_defect: f64,
    report: CoarseMapReportJson,
}

#[derive(Serialize)]
struct RigidityInputs {
    source: InputRecord,
    target: InputRecord,
    unitary: InputRecord,
}

#[derive(Serialize)]
struct RigidityParams {
    floor_threshold: f64,
}

fn cmd_rigidity(args: RigidityArgs) -> CliResult {
    let (source, source_rec) = load_space(&args.source)?;
    let (target, target_rec) = match &args.target_space {
        Some(p) => load_space(p)?,
        None => load_space(&args.source)?,
    };
    let (utext, urec) = read_input(&args.unitary)?;
    let unitary = SpatialUnitary::from_json(&utext, source, target)?;
    let opts = ExtractOptions { floor_threshold: args.floor_threshold };
    let report = extract_map_with(&unitary, &opts)?;
    let verdict = report.verdict;
    let body = RigidityReport {
        inputs: RigidityInputs { source: source_rec, target: target_rec, unitary: urec },
        parameters: RigidityParams { floor_threshold: args.floor_threshold },
        unitary_defect: unitary.unitary_defect(),
        report: report.json_struct(),
    };
    emit(
        &args.out,
        &to_json_string(&body),
        if verdict == Verdict::Pass { "pass" } else { "fail" },
    )?;
    if args.format == "csv" {
        if let Some(out) = &args.out {
            let csv_path = out.with_extension("csv");
            let mut csv = String::from("map,r,omega\n");
            for (r, w) in &body.report.expansion_f {
                csv.push_str(&format!("f,{},{}\n", format_float(*r), format_float(*w)));
            }
            for (r, w) in &body.report.expansion_g {
                csv.push_str(&format!("g,{},{}\n", format_float(*r), format_float(*w)));
            }
            atomic_write(&csv_path, csv.as_bytes())?;
            println!("wrote {}", csv_path.display());
        }
    }
    Ok(if verdict == Verdict::Pass { 0 } else { 5 })
}

#[derive(Serialize)]
struct LemmaCliReport {
    inputs: LemmaInputs,
    report: LemmaReport,
    verdict: String,
}

#[derive(Serialize)]
struct LemmaInputs {
    space: InputRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    unitary: Option<InputRecord>,
}

#[derive(Serialize)]
struct UncertifiedReport {
    verdict: String,
    reason: String,
}

fn cmd_lemma(args: LemmaArgs) -> CliResult {
    let (space, space_rec) = load_space(&args.space)?;
    let (family, urec) = match &args.unitary {
        Some(upath) => {
            let (utext, urec) = read_input(upath)?;
            let unitary = SpatialUnitary::from_json(&utext, space.clone(), space.clone())?;
            let fam =
                ProjectionFamily::conjugated_basis(space.clone(), 1, unitary.matrix().clone())?;
            (fam, Some(urec))
        }
        None => {
            let members: Result<Vec<BandedOperator>, Error> = (0..space.len())
                .map(|x| BandedOperator::matrix_unit(space.clone(), x, x))
                .collect();
            (ProjectionFamily::new(members?)?, None)
        }
    };
    let opts =
        LemmaOptions { delta_override: args.delta, halving_sample: args.halving_sample };
    match check_halving_lemma(&family, args.epsilon, args.r, &opts) {
        Ok(report) => {
            let pass = report.pass;
            let body = LemmaCliReport {
                inputs: LemmaInputs { space: space_rec, unitary: urec },
                report,
                verdict: if pass { "pass".into() } else { "conclusion_failed".into() },
            };
            emit(&args.out, &to_json_string(&body), if pass { "pass" } else { "FAIL" })?;
            Ok(if pass { 0 } else { 5 })
        }
        Err(Error::Uncertified(reason)) => {
            let body =
                UncertifiedReport { verdict: "uncertified".into(), reason: reason.clone() };
            emit(&args.out, &to_json_string(&body), "uncertified")?;
            eprintln!("uncertified hypothesis: {reason}");
            Ok(4)
        }
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct LocalizeCliReport {
    inputs: LocalizeInputs,
    parameters: LocalizationParams,
    measured: LocalizeMeasured,
    result: LocalizeBody,
    verdict: String,
}

#[derive(Serialize)]
struct LocalizeInputs {
    space: InputRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection: Option<InputRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unitary: Option<InputRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    approximant: Option<InputRecord>,
}

#[derive(Serialize)]
struct LocalizeMeasured {
    approximant_distance: f64,
    approximant_propagation: f64,
    witness_overlap: f64,
    witness_diameter: f64,
}

#[derive(Serialize)]
struct LocalizeBody {
    support: IndexSet,
    diameter: f64,
    defect: f64,
    power_index: usize,
    power_norms: Vec<f64>,
    xi: Vec<[f64; 2]>,
}

fn cmd_localize(args: LocalizeArgs) -> CliResult {
    let (space, space_rec) = load_space(&args.space)?;
    let mut inputs = LocalizeInputs {
        space: space_rec,
        projection: None,
        unitary: None,
        approximant: None,
    };
    let p: BandedOperator = if let Some(ppath) = &args.projection {
        let (ptext, prec) = read_input(ppath)?;
        inputs.projection = Some(prec);
        BandedOperator::from_json(&ptext, space.clone())?
    } else if let (Some(upath), Some(center), Some(radius)) =
        (&args.unitary, args.ball_center, args.ball_radius)
    {
        let (utext, urec) = read_input(upath)?;
        inputs.unitary = Some(urec);
        let unitary = SpatialUnitary::from_json(&utext, space.clone(), space.clone())?;
        let ball = space.ball(center, radius)?;
        let chi = BandedOperator::coordinate_projection(space.clone(), 1, &ball)?;
        unitary.conjugate(&chi)?
    } else {
        return Err(Error::domain(
            "provide --projection, or --unitary with --ball-center and --ball-radius",
        ));
    };

    let a: BandedOperator = if let Some(apath) = &args.approximant {
        let (atext, arec) = read_input(apath)?;
        inputs.approximant = Some(arec);
        BandedOperator::from_json(&atext, space.clone())?
    } else if let Some(s) = args.s {
        p.truncate(s)?
    } else {
        return Err(Error::domain("provide --approximant or --s"));
    };

    let zeta: Vec<Complex64> = if let Some(x) = args.zeta_point {
        if x >= space.len() {
            return Err(Error::domain(format!("--zeta-point {x} outside the space")));
        }
        let mut v = vec![Complex64::ZERO; p.dim()];
        v[x] = Complex64::ONE;
        v
    } else if let Some(zpath) = &args.zeta_file {
        let (ztext, _) = read_input(zpath)?;
        let pairs: Vec<[f64; 2]> = serde_json::from_str(&ztext)
            .map_err(|e| Error::invalid(format!("witness vector JSON: {e}")))?;
        pairs.iter().map(|[re, im]| Complex64::new(*re, *im)).collect()
    } else {
        return Err(Error::domain("provide --zeta-point or --zeta-file"));
    };

    let s_param = args.s.unwrap_or_else(|| a.propagation());
    let zeta_support: Vec<usize> = zeta
        .iter()
        .enumerate()
        .filter(|(_, z)| z.norm() > 1e-12)
        .map(|(i, _)| i / p.fiber_dim())
        .collect();
    let t_param = space.subset_diameter(&IndexSet::new(zeta_support, space.len())?);
    let params = derive_params(args.epsilon, args.delta, s_param, t_param)?;

    let measured = LocalizeMeasured {
        approximant_distance: p.sub(&a)?.op_norm_default()?,
        approximant_propagation: a.propagation(),
        witness_overlap: roe_lab::linalg::vec_norm(&p.apply_to_vector(&zeta)?),
        witness_diameter: t_param,
    };

    match localize(&p, &a, &zeta, &params) {
        Ok(res) => {
            let body = LocalizeCliReport {
                inputs,
                parameters: params,
                measured,
                result: LocalizeBody {
                    support: res.support,
                    diameter: res.diameter,
                    defect: res.defect,
                    power_index: res.power_index,
                    power_norms: res.power_norms,
                    xi: res.xi.iter().map(|z| [z.re, z.im]).collect(),
                },
                verdict: "pass".into(),
            };
            emit(&args.out, &to_json_string(&body), "pass")?;
            Ok(0)
        }
        Err(Error::Uncertified(reason)) => {
            let body =
                UncertifiedReport { verdict: "uncertified".into(), reason: reason.clone() };
            emit(&args.out, &to_json_string(&body), "uncertified")?;
            eprintln!("uncertified hypothesis: {reason}");
            Ok(4)
        }
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct GhostCliReport {
    inputs: GhostInputs,
    parameters: GhostParams,
    report: roe_lab::rigidity::GhostTransportReport,
}

#[derive(Serialize)]
struct GhostInputs {
    source: InputRecord,
    target: InputRecord,
    unitary: InputRecord,
    operator: InputRecord,
}

#[derive(Serialize)]
struct GhostParams {
    exhaustion_sizes: Vec<usize>,
    threshold: f64,
}

fn cmd_ghost(args: GhostArgs) -> CliResult {
    let (source, source_rec) = load_space(&args.source)?;
    let (target, target_rec) = match &args.target_space {
        Some(p) => load_space(p)?,
        None => load_space(&args.source)?,
    };
    let (utext, urec) = read_input(&args.unitary)?;
    let unitary = SpatialUnitary::from_json(&utext, source.clone(), target.clone())?;
    let (otext, orec) = read_input(&args.operator)?;
    let op = BandedOperator::from_json(&otext, source.clone())?;

    let sizes: Vec<usize> = match &args.exhaustion {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("cannot parse exhaustion size '{s}'")))
            })
            .collect::<Result<Vec<usize>, Error>>()?,
        None => {
            let mut sizes = Vec::new();
            let mut k = 1;
            while k < source.len() {
                sizes.push(k);
                k *= 2;
            }
            sizes.push(source.len());
            sizes
        }
    };
    let chain = |n: usize| -> Result<Vec<IndexSet>, Error> {
        sizes
            .iter()
            .map(|&k| {
                if k == 0 || k > n {
                    return Err(Error::domain(format!(
                        "exhaustion size {k} out of range for {n} points"
                    )));
                }
                IndexSet::new((0..k).collect(), n)
            })
            .collect()
    };
    let source_chain = chain(source.len())?;
    let target_chain = chain(target.len())?;
    let report =
        ghost_transport_experiment(&unitary, &op, &source_chain, &target_chain, args.threshold)?;
    let body = GhostCliReport {
        inputs: GhostInputs {
            source: source_rec,
            target: target_rec,
            unitary: urec,
            operator: orec,
        },
        parameters: GhostParams { exhaustion_sizes: sizes, threshold: args.threshold },
        report,
    };
    let summary = if body.report.consistent { "consistent" } else { "inconsistent" };
    emit(&args.out, &to_json_string(&body), summary)?;
    Ok(0)
}
