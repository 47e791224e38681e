use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use geonet::data::{self, GrindingSurrogateConfig, Sampling};
use geonet::harness::{self, ReportFormat};
use geonet::{
    Error, ExperimentSpec, Fallback, GeoNet, PoolRule, ScopeSchedule, TrainConfig, TrainStatus,
    TrainTrace, Variant,
};

mod preset;

use preset::Preset;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_STALLED: u8 = 4;
const EXIT_DATA: u8 = 5;

/// Grow single-hidden-layer networks node by node under a compact angle
/// constraint.
#[derive(Debug, Parser)]
#[command(name = "geonet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    GenData(GenDataArgs),
    /// Train one network and write its model and trace.
    Train(TrainArgs),
    /// Evaluate a saved model on a CSV file.
    Eval(EvalArgs),
    /// Run a repeated experiment from a JSON spec.
    Bench(BenchArgs),
    /// Summarize a trace CSV.
    InspectTrace(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataKind {
    Function,
    Grinding,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    kind: DataKind,
    #[arg(long, default_value_t = 2400)]
    n: usize,
    /// Overridden by GEONET_SEED when set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise standard deviation (grinding only), relative to the output range.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Input sampling for the function dataset.
    #[arg(long, value_enum, default_value_t = SamplingArg::Uniform)]
    sampling: SamplingArg,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplingArg {
    Uniform,
    Grid,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of trailing target columns.
    #[arg(long, default_value_t = 1)]
    targets: usize,
    #[arg(long, value_parser = parse_via::<Variant>)]
    variant: Variant,
    /// Load scopes, tolerance and budgets for a known dataset.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long)]
    tmax: Option<usize>,
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// `a:s:b` grid, a single value, or a comma list.
    #[arg(long, value_parser = parse_via::<ScopeSchedule>)]
    scopes: Option<ScopeSchedule>,
    /// Overridden by GEONET_SEED when set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_via::<Fallback>, default_value = "accept_best")]
    fallback: Fallback,
    #[arg(long, value_parser = parse_via::<PoolRule>)]
    pool_rule: Option<PoolRule>,
    /// Training fraction; 1 trains on every row with no test set.
    #[arg(long, default_value_t = 0.7)]
    split: f64,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write zero elapsed times so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Number of trailing target columns; defaults to the model's output count.
    #[arg(long)]
    targets: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    spec: PathBuf,
    /// `.json` writes JSON, anything else CSV.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for repeats; 1 runs sequentially.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replace the experiment file's base seed. Overridden by GEONET_SEED when set.
    #[arg(long)]
    seed: Option<u64>,
    /// Report zero wall times so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    trace: PathBuf,
    /// RMSE levels to report node counts for.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.04, 0.03, 0.02, 0.01])]
    levels: Vec<f64>,
}

fn parse_via<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => EXIT_IO,
            Error::InvalidParameter(_) => EXIT_USAGE,
            Error::Stalled { .. } => EXIT_STALLED,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn seed_override(flag: u64) -> CliResult<u64> {
    match std::env::var("GEONET_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("GEONET_SEED is not a u64: {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("GEONET_SEED") {
        Ok(_) => seed_override(0).map(Some),
        Err(_) => Ok(None),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e).into()),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e).into()),
    }
}

fn gen_data(args: GenDataArgs) -> CliResult<u8> {
    let seed = seed_override(args.seed)?;
    let ds = match args.kind {
        DataKind::Function => {
            let sampling = match args.sampling {
                SamplingArg::Uniform => Sampling::Uniform,
                SamplingArg::Grid => Sampling::Grid,
            };
            data::gen_function(args.n, seed, sampling)?
        }
        DataKind::Grinding => data::gen_grinding_surrogate(&GrindingSurrogateConfig {
            n: args.n,
            seed,
            noise_sd: args.noise,
        })?,
    };
    match &args.out {
        Some(p) => ds.write_csv(p)?,
        None => write_out(None, &ds.to_csv_string())?,
    }
    Ok(0)
}

fn build_config(args: &TrainArgs, seed: u64) -> CliResult<TrainConfig> {
    let v = args.variant;
    let scopes = match (&args.scopes, &args.preset) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => p.scopes_for(v),
        (None, None) => return Err(Failure::usage("either --scopes or --preset is required")),
    };
    let mut c = TrainConfig::new(v, scopes);
    if let Some(p) = &args.preset {
        c.t_max = p.t_max_for(v);
        c.l_max = p.l_max;
        c.tol = p.tol;
    }
    c.tau = args.tau;
    c.mu = args.mu;
    c.t_max = args.tmax.unwrap_or(c.t_max);
    c.l_max = args.lmax.unwrap_or(c.l_max);
    c.tol = args.tol.unwrap_or(c.tol);
    c.seed = seed;
    c.fallback = args.fallback;
    c.pool_rule = args.pool_rule;
    c.validate()?;
    Ok(c)
}

fn train_cmd(args: TrainArgs) -> CliResult<u8> {
    let seed = seed_override(args.seed)?;
    let config = build_config(&args, seed)?;
    if !(args.split > 0.0 && args.split <= 1.0) {
        return Err(Failure::usage(format!(
            "--split must lie in (0, 1], got {}",
            args.split
        )));
    }
    let ds = data::load_csv(&args.data, args.targets)?;
    let (tr, te) = if args.split < 1.0 {
        let (a, b) = data::split(&ds, args.split, seed)?;
        (a, Some(b))
    } else {
        (ds, None)
    };
    let out = geonet::train(&config, &tr, te.as_ref())?;
    if let Some(p) = &args.model_out {
        out.net.save(p)?;
    }
    if let Some(p) = &args.trace_out {
        out.trace.write_csv(p, !args.deterministic)?;
    }
    let test = out
        .trace
        .records
        .last()
        .and_then(|r| r.test_rmse)
        .map_or_else(|| "-".to_string(), |v| v.to_string());
    println!(
        "status={} nodes={} train_rmse={} test_rmse={} fallbacks={}",
        out.trace.status,
        out.net.len(),
        out.trace.final_rmse(),
        test,
        out.trace.fallback_count()
    );
    Ok(if out.trace.status == TrainStatus::Stalled {
        EXIT_STALLED
    } else {
        0
    })
}

fn eval_cmd(args: EvalArgs) -> CliResult<u8> {
    let net = GeoNet::load(&args.model)?;
    let m = args.targets.unwrap_or(net.output_dim());
    let ds = data::load_csv(&args.data, m)?;
    if ds.n_features() != net.input_dim() || ds.n_targets() != net.output_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features and {} targets, data has {} and {}",
            net.input_dim(),
            net.output_dim(),
            ds.n_features(),
            ds.n_targets()
        ))
        .into());
    }
    let norm = net.norm_stats.apply(&ds)?;
    let rmse = harness::rmse(norm.y(), &net.predict_normalized(norm.x())?)?;
    let yhat = net.predict(ds.x())?;
    let mut out = format!("rmse={rmse}\n");
    if m == 1 {
        out.push_str("index,y,yhat\n");
    } else {
        let cols: Vec<String> = (1..=m).map(|q| format!("y{q},yhat{q}")).collect();
        out.push_str(&format!("index,{}\n", cols.join(",")));
    }
    for i in 0..ds.len() {
        out.push_str(&i.to_string());
        for q in 0..m {
            out.push_str(&format!(",{},{}", ds.y().get(i, q), yhat.get(i, q)));
        }
        out.push('\n');
    }
    write_out(None, &out)?;
    Ok(0)
}

fn bench_cmd(args: BenchArgs) -> CliResult<u8> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let mut spec = ExperimentSpec::from_json(&text).map_err(|e| match e {
        Error::Malformed(m) => Failure::usage(m),
        other => other.into(),
    })?;
    if let Some(s) = env_seed()?.or(args.seed) {
        spec.base_seed = s;
    }
    if args.deterministic {
        spec.record_timing = false;
    }
    let report = harness::run_experiment(&spec, args.jobs)?;
    report.emit(ReportFormat::from_path(&args.out), &args.out)?;
    print!("{}", report.summary_table());
    Ok(0)
}

fn inspect_cmd(args: InspectArgs) -> CliResult<u8> {
    let trace = TrainTrace::read_csv(&args.trace)?;
    let mut out = format!(
        "status={} nodes={} final_train_rmse={} fallbacks={}\n",
        trace.status,
        trace.records.len(),
        trace.records.last().map_or(f64::NAN, |r| r.train_rmse),
        trace.fallback_count()
    );
    if let Some(last) = trace.records.last() {
        if let Some(t) = last.test_rmse {
            out.push_str(&format!("final_test_rmse={t}\n"));
        }
        if last.elapsed_ms > 0.0 {
            out.push_str(&format!(
                "elapsed_ms={} per_node_ms={}\n",
                last.elapsed_ms,
                last.elapsed_ms / last.l as f64
            ));
        }
    }
    for level in &args.levels {
        let hit = trace
            .records
            .iter()
            .find(|r| r.train_rmse <= *level)
            .map_or_else(|| "-".to_string(), |r| r.l.to_string());
        out.push_str(&format!("nodes_to_{level}={hit}\n"));
    }
    write_out(None, &out)?;
    Ok(0)
}

/// Usage text of the named subcommand, or of the whole program.
fn usage_for(name: Option<&str>) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match name.and_then(|n| cmd.find_subcommand_mut(n)) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::InspectTrace(a) => inspect_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("geonet: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
