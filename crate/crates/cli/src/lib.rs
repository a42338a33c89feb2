//! `blindspot` command line.
//!
//! Batch subcommands load a bundle, train the head with the given seed and
//! write CSV tables, either into `--out` or to stdout. Exit code 1 marks
//! invalid inputs or failed analyses, 2 marks usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use blindspot_core::bundle::{load_bundle, load_concept_specs, validate_bundle, write_bundle};
use blindspot_core::debias::debias_curve;
use blindspot_core::synthetic::{generate, PlantConfig};
use blindspot_core::{AnalysisConfig, DatasetBundle, DebiasEvaluation, Session, Split};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "ESCAPE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] blindspot_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "blindspot", version, about = "Concept-association analysis of classifier errors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a bundle directory for structural problems.
    Validate { bundle: PathBuf },
    /// Generate a synthetic bundle with planted concepts.
    Synth(SynthArgs),
    /// Test-split accuracy, confusion matrix and unknown-unknown counts.
    Diagnose(CommonArgs),
    /// Association table of every concept over the pair's instances.
    Associate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        concepts: ConceptArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Between-class disparity of every concept.
    Disparity {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        concepts: ConceptArgs,
    },
    /// Concept influence on false negatives and false positives.
    Influence {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        concepts: ConceptArgs,
    },
    /// Remaining-bias curve over the number of debiased instances.
    Curve {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        concepts: ConceptArgs,
        /// Concept id (c1, c2, ...) or name.
        #[arg(long)]
        concept: String,
        /// Also retrain and report accuracy at every grid point.
        #[arg(long)]
        evaluate: bool,
        /// Comma-separated grid starting at 0; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
    },
    /// Debias n instances, retrain and compare with the current head.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        concepts: ConceptArgs,
        #[arg(long)]
        concept: String,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = ControlArg::Concept)]
        control: ControlArg,
    },
    /// Serve the HTTP API for one bundle.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Bundle directory.
    pub bundle: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Class pair as `negative,positive` (names or indices).
    #[arg(long, default_value = "0,1")]
    pub pair: String,
    /// Directory for CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConceptArgs {
    /// JSON list of {name, segment_ids}.
    #[arg(long)]
    pub concepts: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator config; unspecified fields take benchmark defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value = "0,1")]
    pub pair: String,
    /// Concepts to create before serving.
    #[arg(long)]
    pub concepts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ControlArg {
    Concept,
    Random,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Validate { bundle } => validate(&bundle),
        Command::Synth(args) => synth(&args),
        Command::Diagnose(common) => {
            let s = open(&common, None)?;
            emit(&common.out, "diagnose.csv", diagnose_csv(&s)?)
        }
        Command::Associate { common, concepts, split } => {
            let s = open(&common, Some(&concepts.concepts))?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            emit(&common.out, "association.csv", association_csv(&s, split)?)
        }
        Command::Disparity { common, concepts } => {
            let s = open(&common, Some(&concepts.concepts))?;
            emit(&common.out, "disparity.csv", disparity_csv(&s)?)
        }
        Command::Influence { common, concepts } => {
            let s = open(&common, Some(&concepts.concepts))?;
            emit(&common.out, "influence.csv", influence_csv(&s)?)
        }
        Command::Curve { common, concepts, concept, evaluate, grid } => {
            let s = open(&common, Some(&concepts.concepts))?;
            let id = resolve_concept(&s, &concept)?;
            let curve = match grid {
                None => (*s.curve(&id, evaluate)?).clone(),
                Some(g) => {
                    let snap = s.snapshot();
                    debias_curve(&snap.analysis, &snap.concepts, &id, snap.pair, Some(&g), evaluate)?
                }
            };
            emit(&common.out, &format!("curve_{id}.csv"), curve.to_csv_string()?.into_bytes())
        }
        Command::Evaluate { common, concepts, concept, n, control } => {
            let s = open(&common, Some(&concepts.concepts))?;
            let id = resolve_concept(&s, &concept)?;
            let (run, tag) = match control {
                ControlArg::Concept => ((*s.evaluate(&id, n)?).clone(), "concept"),
                ControlArg::Random => (s.evaluate_control(&id, n)?, "random"),
            };
            emit(&common.out, &format!("evaluate_{id}_{n}_{tag}.csv"), evaluation_csv(&run)?)
        }
        Command::Serve(args) => serve(&args),
    }
}

fn seed_of(arg: &SeedArg) -> u64 {
    arg.seed.unwrap_or(0)
}

fn load(path: &Path) -> CliResult<DatasetBundle> {
    Ok(load_bundle(path)?)
}

fn validate(path: &Path) -> CliResult<()> {
    let bundle = load(path)?;
    let violations = validate_bundle(&bundle);
    if let Some(first) = violations.first() {
        for v in &violations {
            eprintln!("{}: {}", v.entity, v.message);
        }
        return Err(CliError::Invalid(format!("{} violation(s), first at {}", violations.len(), first.entity)));
    }
    println!(
        "ok: {} instances, {} segments, dim {}, {} classes",
        bundle.instances.len(),
        bundle.segments.len(),
        bundle.dim,
        bundle.num_classes()
    );
    Ok(())
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            let base = serde_json::to_value(PlantConfig::benchmark(0)).expect("config serializes");
            let patch: serde_json::Value = serde_json::from_str(&text).map_err(blindspot_core::Error::from)?;
            serde_json::from_value(merge(base, patch)).map_err(blindspot_core::Error::from)?
        }
        None => PlantConfig::benchmark(0),
    };
    if let Some(seed) = args.seed.seed {
        config.seed = seed;
    }
    let (bundle, truth) = generate(&config)?;
    write_bundle(&bundle, &args.out)?;
    write_file(&args.out.join("ground_truth.json"), &to_json(&truth))?;
    write_file(&args.out.join("concepts.json"), &to_json(&truth.concept_specs()))?;
    write_file(&args.out.join("plant_config.json"), &to_json(&config))?;
    eprintln!("wrote {} instances, {} segments to {}", bundle.instances.len(), bundle.segments.len(), args.out.display());
    Ok(())
}

/// Overlay the keys of `patch` on `base`, one object level deep.
fn merge(base: serde_json::Value, patch: serde_json::Value) -> serde_json::Value {
    match (base, patch) {
        (serde_json::Value::Object(mut b), serde_json::Value::Object(p)) => {
            b.extend(p);
            serde_json::Value::Object(b)
        }
        (_, p) => p,
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_vec_pretty(value).expect("value serializes");
    text.push(b'\n');
    text
}

fn parse_pair(bundle: &DatasetBundle, text: &str) -> CliResult<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [neg, pos] = parts[..] else {
        return Err(CliError::Usage(format!("--pair expects two classes, got {text:?}")));
    };
    let class = |name: &str| bundle.class_index(name).ok_or_else(|| CliError::Usage(format!("unknown class {name:?}")));
    Ok((class(neg)?, class(pos)?))
}

/// Build a session for `pair` with the concepts file loaded in order (ids c1, c2, ...).
fn session(bundle: DatasetBundle, seed: u64, pair: &str, concepts: Option<&Path>) -> CliResult<Session> {
    let (neg, pos) = parse_pair(&bundle, pair)?;
    let s = Session::new(bundle, AnalysisConfig::with_seed(seed))?;
    s.select_pair(neg, pos).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(path) = concepts {
        for spec in load_concept_specs(path)? {
            s.create_concept(&spec.name, &spec.segment_ids)?;
        }
    }
    Ok(s)
}

fn open(common: &CommonArgs, concepts: Option<&PathBuf>) -> CliResult<Session> {
    let bundle = load(&common.bundle)?;
    session(bundle, seed_of(&common.seed), &common.pair, concepts.map(PathBuf::as_path))
}

fn resolve_concept(s: &Session, key: &str) -> CliResult<String> {
    let concepts = s.concepts();
    concepts
        .iter()
        .find(|c| c.id == key)
        .or_else(|| concepts.iter().find(|c| c.name == key))
        .map(|c| c.id.clone())
        .ok_or_else(|| CliError::Usage(format!("unknown concept {key:?}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

fn emit(out: &Option<PathBuf>, name: &str, bytes: Vec<u8>) -> CliResult<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
            write_file(&dir.join(name), &bytes)
        }
        None => match std::io::stdout().write_all(&bytes) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                Err(CliError::Io { path: "<stdout>".into(), source: e })
            }
            _ => Ok(()),
        },
    }
}

fn table(header: &[String], rows: Vec<Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(blindspot_core::Error::from)?;
    for row in rows {
        w.write_record(&row).map_err(blindspot_core::Error::from)?;
    }
    w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per true class plus a `*` total row; `pred_<class>` columns hold the confusion matrix.
pub fn diagnose_csv(s: &Session) -> CliResult<Vec<u8>> {
    let o = s.overview()?;
    let c = &o.confusion;
    let mut header: Vec<String> =
        ["class", "support", "correct", "misclassified", "unknown_unknowns", "accuracy"].map(String::from).to_vec();
    header.extend(o.classes.iter().map(|name| format!("pred_{name}")));
    let mut rows = Vec::new();
    for (k, name) in o.classes.iter().enumerate() {
        let support: usize = c.matrix[k].iter().sum();
        let correct = c.matrix[k][k];
        let acc = if support == 0 { String::new() } else { (correct as f64 / support as f64).to_string() };
        let mut row = vec![
            name.clone(),
            support.to_string(),
            correct.to_string(),
            c.misclassified[k].to_string(),
            c.unknown_unknowns[k].to_string(),
            acc,
        ];
        row.extend(c.matrix[k].iter().map(usize::to_string));
        rows.push(row);
    }
    let mut total = vec![
        "*".to_string(),
        c.total.to_string(),
        c.correct.to_string(),
        c.misclassified.iter().sum::<usize>().to_string(),
        c.unknown_unknowns.iter().sum::<usize>().to_string(),
        o.accuracy.to_string(),
    ];
    total.extend((0..o.classes.len()).map(|j| c.matrix.iter().map(|r| r[j]).sum::<usize>().to_string()));
    rows.push(total);
    table(&header, rows)
}

pub fn association_csv(s: &Session, split: Split) -> CliResult<Vec<u8>> {
    let snap = s.snapshot();
    let (rows, t) = snap.table(split)?;
    let header = [
        "instance_id", "label", "concept_id", "concept_name", "raw", "z", "raw_rank", "ex_rank", "frex", "comb_rank",
        "top_concept",
    ]
    .map(String::from);
    let classes = &snap.analysis.bundle.classes;
    let mut out = Vec::new();
    for (i, &row) in rows.iter().enumerate() {
        for (c, concept) in snap.concepts.iter().enumerate() {
            out.push(vec![
                t.instance_ids[i].clone(),
                classes[snap.analysis.labels[row]].clone(),
                concept.id.clone(),
                concept.name.clone(),
                t.raw[[i, c]].to_string(),
                t.z[[i, c]].to_string(),
                t.raw_rank[[i, c]].to_string(),
                t.ex_rank[[i, c]].to_string(),
                t.frex[[i, c]].to_string(),
                t.comb_rank[[i, c]].to_string(),
                t.concept_ids[t.top_concept[i]].clone(),
            ]);
        }
    }
    table(&header, out)
}

pub fn disparity_csv(s: &Session) -> CliResult<Vec<u8>> {
    let snap = s.snapshot();
    let classes = &snap.analysis.bundle.classes;
    let header = ["concept_id", "concept_name", "members", "negative", "positive", "disparity"].map(String::from);
    let rows = s
        .concept_overview()?
        .into_iter()
        .map(|c| {
            vec![
                c.id,
                c.name,
                c.member_count.to_string(),
                classes[snap.pair.negative].clone(),
                classes[snap.pair.positive].clone(),
                c.disparity.to_string(),
            ]
        })
        .collect();
    table(&header, rows)
}

/// Influence toward the wrongly predicted class: FN rows toward the negative class, FP rows toward the positive.
pub fn influence_csv(s: &Session) -> CliResult<Vec<u8>> {
    let header =
        ["concept_id", "concept_name", "case", "count", "positive_fraction", "mean_derivative"].map(String::from);
    let mut rows = Vec::new();
    for c in s.concept_overview()? {
        for (case, count, inf) in [("FN", c.fn_count, c.fn_influence), ("FP", c.fp_count, c.fp_influence)] {
            rows.push(vec![
                c.id.clone(),
                c.name.clone(),
                case.to_string(),
                count.to_string(),
                opt(inf.map(|i| i.positive_fraction)),
                opt(inf.map(|i| i.mean_derivative)),
            ]);
        }
    }
    table(&header, rows)
}

pub fn evaluation_csv(e: &DebiasEvaluation) -> CliResult<Vec<u8>> {
    let header = [
        "concept_id", "n", "control", "acc_before", "acc_after", "subgroup_before", "subgroup_after",
        "disparity_before", "disparity_after", "rbr", "pct_bias_mitigated",
    ]
    .map(String::from);
    let control = match e.control {
        blindspot_core::Control::Concept => "concept".to_string(),
        blindspot_core::Control::Random { seed } => format!("random:{seed}"),
    };
    let row = vec![
        e.concept_id.clone(),
        e.n.to_string(),
        control,
        e.acc_before.to_string(),
        e.acc_after.to_string(),
        e.subgroup_before.to_string(),
        e.subgroup_after.to_string(),
        e.disparity_before.to_string(),
        e.disparity_after.to_string(),
        e.rbr.to_string(),
        e.pct_bias_mitigated.to_string(),
    ];
    table(&header, vec![row])
}

fn serve(args: &ServeArgs) -> CliResult<()> {
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
    let bundle = load(&args.bundle)?;
    let s = Arc::new(session(bundle, seed_of(&args.seed), &args.pair, args.concepts.as_deref())?);
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io { path: "<runtime>".into(), source })?;
    rt.block_on(blindspot_server::serve(s, addr)).map_err(|source| CliError::Io { path: addr.to_string().into(), source })
}
