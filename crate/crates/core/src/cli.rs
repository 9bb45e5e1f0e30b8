//! Command-line front end. Every subcommand maps onto one library call;
//! files named by `--out` receive the machine-readable result and standard
//! output gets a one-line summary.
//!
//! Exit codes: 0 success, 1 domain error (bad file, guard exceeded, ...),
//! 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{self, Lit, VarMap};
use crate::encoder::{encode_model, Granularity};
use crate::explain::{
    explain_why, explain_whynot, render_report, AxpMode, ExplainError, Explanation, FeatureOrder, Session,
};
use crate::fixedpoint::FixedPointFormat;
use crate::model::{predict_input, ModelSpec, Quantization, VideoFeatureSequence};
use crate::oracle;
use crate::solver::{solve_external, BackendKind, CdclSolver, SatBackend, SolveResult, SolverConfig};
use crate::videoharness::{self, Dataset};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments; also carries `--help` and `--version` output.
    #[error("{0}")]
    Parse(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

fn domain<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Domain(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "satxplain", version, about = "SAT-based explanations for quantized video classifiers")]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic moving-dot video dataset.
    GenData(GenDataArgs),
    /// Train a float classifier on a dataset.
    Train(TrainArgs),
    /// Set the fixed-point formats of a model.
    Quantize(QuantizeArgs),
    /// Write the model's CNF encoding (DIMACS) plus a variable-map sidecar.
    Encode(EncodeArgs),
    /// Explanation queries.
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Check that the encoding reproduces the quantized forward pass.
    Fidelity(FidelityArgs),
    /// Solve a DIMACS file and print the `s` / `v` answer lines.
    Solve(SolveArgs),
}

#[derive(Debug, Subcommand)]
enum ExplainCommand {
    /// Which features keep the prediction fixed?
    Why(WhyArgs),
    /// What minimal change yields another class?
    Whynot(WhyNotArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 3)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    width: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Weight format as BITS.FRAC.
    #[arg(long, value_parser = parse_format, default_value = "8.5")]
    weights: FixedPointFormat,
    /// Activation (and input) format as BITS.FRAC.
    #[arg(long, value_parser = parse_format, default_value = "4.2")]
    activations: FixedPointFormat,
    /// Dataset used to report float and quantized test accuracy.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// A concrete input: a feature file, or one video of a dataset.
#[derive(Debug, Args)]
struct InputArgs {
    /// Feature grid file.
    #[arg(long, conflicts_with = "data")]
    input: Option<PathBuf>,
    /// Dataset file; use with --index.
    #[arg(long, requires = "index")]
    data: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// `internal` or `external:<command>`.
    #[arg(long, default_value = "internal", value_parser = parse_backend)]
    backend: BackendKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Add "prediction is C" as unit-enabled constraint.
    #[arg(long, conflicts_with = "output_not")]
    output_is: Option<usize>,
    /// Add "prediction is not C" as unit-enabled constraint.
    #[arg(long)]
    output_not: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WhyArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "entailment")]
    mode: AxpMode,
    /// Shuffle the deletion order with --seed instead of ascending (t, d).
    #[arg(long)]
    shuffle: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WhyNotArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    target_class: usize,
    #[arg(long, default_value = "features")]
    granularity: Granularity,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FidelityArgs {
    #[arg(long)]
    model: PathBuf,
    /// Check this many random inputs instead of all of them.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    file: PathBuf,
    #[arg(long, default_value = "internal", value_parser = parse_backend)]
    backend: BackendKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_format(s: &str) -> Result<FixedPointFormat, String> {
    let (b, f) = s
        .split_once('.')
        .ok_or_else(|| format!("expected BITS.FRAC, got '{s}'"))?;
    let bits = b.parse().map_err(|_| format!("bad bit count '{b}'"))?;
    let frac = f.parse().map_err(|_| format!("bad fraction bit count '{f}'"))?;
    FixedPointFormat::new(bits, frac).map_err(|e| e.to_string())
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
}

/// Sidecar written next to an encoded DIMACS file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSidecar {
    pub num_vars: u32,
    pub num_clauses: usize,
    /// Input bit literals per feature, frame-major, LSB first.
    pub inputs: Vec<Vec<Lit>>,
    /// Logit bits per class, LSB first; constants appear as booleans.
    pub outputs: Vec<Vec<SignalBit>>,
    pub output_format: FixedPointFormat,
    /// Guard literal of the query constraint, asserted as a unit clause.
    pub guard: Option<Lit>,
    pub query: Option<String>,
    pub varmap: VarMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignalBit {
    Const(bool),
    Lit(Lit),
}

impl EncodingSidecar {
    pub fn path_for(cnf: &Path) -> PathBuf {
        let mut s = cnf.as_os_str().to_owned();
        s.push(".varmap.json");
        PathBuf::from(s)
    }

    /// Logit mantissas under a model of the encoded formula.
    pub fn decode_outputs(&self, a: &cnf::Assignment) -> Option<Vec<i64>> {
        self.outputs
            .iter()
            .map(|bits| {
                let lits: Vec<Lit> = bits
                    .iter()
                    .map(|b| match *b {
                        SignalBit::Const(c) => Lit::constant(c),
                        SignalBit::Lit(l) => l,
                    })
                    .collect();
                crate::circuit::Signal::new(lits).value_in(a)
            })
            .collect()
    }
}

/// Parses `args` (including the program name) and runs the command,
/// printing any error. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match try_run(args) {
        Ok(()) => 0,
        Err(CliError::Parse(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn try_run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    init_logging(cli.verbose);
    dispatch(cli.command)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Explain(ExplainCommand::Why(a)) => cmd_explain_why(a),
        Command::Explain(ExplainCommand::Whynot(a)) => cmd_explain_whynot(a),
        Command::Fidelity(a) => cmd_fidelity(a),
        Command::Solve(a) => cmd_solve(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Domain(format!("cannot read {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::from_json(&read_file(path)?).map_err(domain)
}

fn load_model(path: &Path) -> Result<ModelSpec, CliError> {
    ModelSpec::load(path).map_err(domain)
}

fn load_input(args: &InputArgs) -> Result<Option<VideoFeatureSequence>, CliError> {
    match (&args.input, &args.data, args.index) {
        (Some(p), _, _) => Ok(Some(VideoFeatureSequence::load(p).map_err(domain)?)),
        (None, Some(d), Some(i)) => {
            let data = load_dataset(d)?;
            if i >= data.len() {
                return Err(CliError::Usage(format!("--index {i} out of range ({} videos)", data.len())));
            }
            Ok(Some(data.features(i)))
        }
        _ => Ok(None),
    }
}

fn require_input(args: &InputArgs) -> Result<VideoFeatureSequence, CliError> {
    load_input(args)?.ok_or_else(|| CliError::Usage("an input is required: --input FILE or --data FILE --index N".into()))
}

fn cmd_gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let data = videoharness::gen_videos(a.seed, a.count, a.frames, a.height, a.width).map_err(domain)?;
    write_file(&a.out, &data.to_json())?;
    println!(
        "wrote {} videos ({} frames, {}x{}) to {}",
        data.len(),
        a.frames,
        a.height,
        a.width,
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let data = load_dataset(&a.data)?;
    let out = videoharness::train_model(
        &data,
        &a.hidden,
        a.epochs,
        a.lr,
        a.seed,
        videoharness::default_quantization(),
    )
    .map_err(domain)?;
    out.model.save(&a.out).map_err(domain)?;
    println!(
        "trained {} epochs: train accuracy {:.4}, loss {:.6}; model in {}",
        a.epochs,
        out.train_accuracy,
        out.final_loss,
        a.out.display()
    );
    Ok(())
}

fn cmd_quantize(a: QuantizeArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?
        .with_quantization(Quantization {
            weights: a.weights,
            activations: a.activations,
        })
        .map_err(domain)?;
    model.save(&a.out).map_err(domain)?;
    let mut line = format!(
        "weights {}, activations {}: {} input bits",
        a.weights,
        a.activations,
        model.total_input_bits()
    );
    if let Some(d) = &a.data {
        let data = load_dataset(d)?;
        let test = data.test_indices();
        let fa = videoharness::float_accuracy(&model, &data, &test).map_err(domain)?;
        let qa = videoharness::quantized_accuracy(&model, &data, &test).map_err(domain)?;
        line.push_str(&format!("; test accuracy float {fa:.4}, quantized {qa:.4}"));
    }
    println!("{line}; model in {}", a.out.display());
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let mut enc = encode_model(&model).map_err(domain)?;
    let mut units: Vec<Lit> = Vec::new();
    if let Some(v) = load_input(&a.input)? {
        units.extend(enc.input_assumptions(&v).map_err(domain)?);
    }
    let (guard, query) = match (a.output_is, a.output_not) {
        (Some(c), _) => (Some(enc.constrain_output_is(c).map_err(usage_on_class)?), Some(format!("output-is {c}"))),
        (None, Some(c)) => (Some(enc.constrain_output_not(c).map_err(usage_on_class)?), Some(format!("output-not {c}"))),
        _ => (None, None),
    };
    units.extend(guard);
    let mut formula = enc.formula().clone();
    for u in &units {
        formula.add_clause([*u]).map_err(domain)?;
    }
    write_file(&a.out, &cnf::to_dimacs_string(&formula))?;
    let sidecar = EncodingSidecar {
        num_vars: formula.num_vars(),
        num_clauses: formula.num_clauses(),
        inputs: (0..model.input_frames())
            .flat_map(|t| (0..model.input_features()).map(move |d| (t, d)))
            .map(|(t, d)| enc.feature_bits(t, d).to_vec())
            .collect(),
        outputs: enc
            .outputs()
            .iter()
            .map(|s| {
                s.bits()
                    .iter()
                    .map(|&b| match b.const_value() {
                        Some(c) => SignalBit::Const(c),
                        None => SignalBit::Lit(b),
                    })
                    .collect()
            })
            .collect(),
        output_format: enc.output_format(),
        guard,
        query,
        varmap: enc.varmap().clone(),
    };
    let side = EncodingSidecar::path_for(&a.out);
    write_file(&side, &(serde_json::to_string_pretty(&sidecar).expect("sidecar serialises") + "\n"))?;
    println!(
        "{} variables, {} clauses in {}; variable map in {}",
        formula.num_vars(),
        formula.num_clauses(),
        a.out.display(),
        side.display()
    );
    Ok(())
}

fn usage_on_class(e: crate::encoder::EncodeError) -> CliError {
    match e {
        crate::encoder::EncodeError::ClassOutOfRange { .. } => CliError::Usage(e.to_string()),
        other => domain(other),
    }
}

fn explain_error(e: ExplainError) -> CliError {
    match e {
        ExplainError::InvalidQuery(_) => CliError::Usage(e.to_string()),
        ExplainError::Encode(inner) => usage_on_class(inner),
        other => domain(other),
    }
}

fn cmd_explain_why(a: WhyArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let video = require_input(&a.input)?;
    let input = model.quantize_input(&video).map_err(domain)?;
    let enc = encode_model(&model).map_err(domain)?;
    let mut session = Session::new(&enc, &a.solver.backend, &SolverConfig::with_seed(a.solver.seed));
    let order = if a.shuffle {
        FeatureOrder::Shuffled { seed: a.solver.seed }
    } else {
        FeatureOrder::Ascending
    };
    let exp = explain_why(&mut session, &input, a.mode, order).map_err(explain_error)?;
    let report = render_report(&Explanation::Why(exp), &model, &session.stats());
    write_file(&a.out, &report.to_json())?;
    println!("{}; report in {}", report.summary, a.out.display());
    Ok(())
}

fn cmd_explain_whynot(a: WhyNotArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let video = require_input(&a.input)?;
    let input = model.quantize_input(&video).map_err(domain)?;
    let predicted = predict_input(&model, &input).map_err(domain)?;
    if a.target_class == predicted {
        return Err(CliError::Usage(format!(
            "--target-class {} is already the prediction; pick another class",
            a.target_class
        )));
    }
    let enc = encode_model(&model).map_err(domain)?;
    let mut session = Session::new(&enc, &a.solver.backend, &SolverConfig::with_seed(a.solver.seed));
    let exp = explain_whynot(&mut session, &input, a.target_class, a.granularity).map_err(explain_error)?;
    let report = render_report(&Explanation::WhyNot(exp), &model, &session.stats());
    write_file(&a.out, &report.to_json())?;
    println!("{}; report in {}", report.summary, a.out.display());
    Ok(())
}

fn cmd_fidelity(a: FidelityArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let enc = encode_model(&model).map_err(domain)?;
    let report = match a.samples {
        Some(n) => oracle::sampled_fidelity(&model, &enc, n, a.seed),
        None => oracle::exhaustive_fidelity(&model, &enc, a.jobs),
    }
    .map_err(domain)?;
    write_file(&a.out, &(serde_json::to_string_pretty(&report).expect("report serialises") + "\n"))?;
    println!(
        "{} inputs checked ({}), {} mismatches; report in {}",
        report.inputs_checked,
        if report.exhaustive { "exhaustive" } else { "sampled" },
        report.mismatches.len(),
        a.out.display()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Domain("encoding disagrees with the quantized forward pass".into()))
    }
}

/// Competition-style answer lines for `result`.
pub fn format_solution(result: &SolveResult) -> String {
    match result {
        SolveResult::Unsat => "s UNSATISFIABLE\n".into(),
        SolveResult::BudgetExhausted => "s UNKNOWN\n".into(),
        SolveResult::Sat(m) => {
            let mut out = String::from("s SATISFIABLE\n");
            let lits: Vec<String> = m.true_lits().map(|l| l.to_dimacs().to_string()).collect();
            for chunk in lits.chunks(20) {
                out.push_str("v ");
                out.push_str(&chunk.join(" "));
                out.push('\n');
            }
            out.push_str("v 0\n");
            out
        }
    }
}

fn cmd_solve(a: SolveArgs) -> Result<(), CliError> {
    let file = std::fs::File::open(&a.file)
        .map_err(|e| CliError::Domain(format!("cannot read {}: {e}", a.file.display())))?;
    let formula = cnf::read_dimacs(std::io::BufReader::new(file)).map_err(domain)?;
    let result = match &a.backend {
        BackendKind::Internal => CdclSolver::from_formula(&formula, SolverConfig::with_seed(a.seed))
            .solve(&[])
            .map_err(domain)?,
        BackendKind::External(cmd) => solve_external(&formula, cmd).map_err(domain)?,
    };
    print!("{}", format_solution(&result));
    Ok(())
}
